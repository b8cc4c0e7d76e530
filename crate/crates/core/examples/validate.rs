//! Run the shipped rule sets over a few answers.

use std::collections::BTreeMap;

use qiguard::record::{BorderlineSubtype, Domain, Label, Record};
use qiguard::validators::checksum::luhn_valid;
use qiguard::validators::{validate_record, ValidatorRuleSet};

fn borderline(domain: Domain, answer: &str) -> Record {
    Record {
        id: "x".into(),
        domain,
        question: "What should happen next?".into(),
        answer: answer.into(),
        label: Label::BorderlineSafe,
        generator: None,
        axes: None,
        subtype: Some(BorderlineSubtype::PopulationDemographics),
        source: "example".into(),
        extra: BTreeMap::new(),
    }
}

fn main() {
    let cases = [
        (
            Domain::Law,
            "Brown v. Board of Education is still cited in funding cases.",
        ),
        (Domain::Law, "A recent widow, Jane, contested the will."),
        (Domain::Finance, "Charge the card 4111 1111 1111 1111 for the fee."),
        (
            Domain::Medical,
            "Adults aged 50 to 70 should be screened every two years.",
        ),
        (
            Domain::Law,
            "A 52-year-old female litigator from Omaha with two children called.",
        ),
    ];
    for (domain, text) in cases {
        let rules = ValidatorRuleSet::builtin(domain);
        let v = validate_record(&borderline(domain, text), &rules);
        let ids: Vec<&str> = v.violations.iter().map(|x| x.rule_id.as_str()).collect();
        println!(
            "{:<8} {:<6} {:?}  {text}",
            domain.as_str(),
            if v.accepted { "pass" } else { "reject" },
            ids
        );
    }
    for card in ["4111111111111111", "4111111111111112"] {
        println!("luhn {card} {}", luhn_valid(card));
    }
}
