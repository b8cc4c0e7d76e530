mod common;

use qiguard::record::{Domain, Label, Record};
use qiguard::validators::{validate_borderline, ValidatorRuleSet};

#[test]
fn fixture_corpus_has_sixty_items_per_domain() {
    for d in Domain::ALL {
        let cases = common::validator_cases(d);
        assert_eq!(cases.len(), 60, "{d}");
        for g in ["direct_id", "clean", "edge"] {
            assert_eq!(cases.iter().filter(|c| c.group == g).count(), 20, "{d} {g}");
        }
    }
}

#[test]
fn fixture_corpus_classified_without_errors() {
    let mut all = Vec::new();
    for d in Domain::ALL {
        all.extend(common::validator_errors(d).1);
    }
    assert!(all.is_empty(), "{}", all.join("\n"));
}

fn borderline(answer: &str) -> Record {
    Record {
        id: "b".into(),
        domain: Domain::Law,
        question: "What should I know?".into(),
        answer: answer.into(),
        label: Label::BorderlineSafe,
        generator: None,
        axes: None,
        subtype: Some(qiguard::record::BorderlineSubtype::PopulationDemographics),
        source: "t".into(),
        extra: Default::default(),
    }
}

#[test]
fn cohort_age_is_a_single_class() {
    let rules = ValidatorRuleSet::builtin(Domain::Medical);
    assert!(validate_borderline(&borderline("adults aged 50–70 should be screened"), &rules).accepted);
}

#[test]
fn litigator_from_omaha_is_a_cluster() {
    let rules = ValidatorRuleSet::builtin(Domain::Law);
    let v = validate_borderline(
        &borderline("a 52-year-old female litigator from Omaha with two children"),
        &rules,
    );
    assert!(!v.accepted);
    let cluster = v.violations.iter().find(|x| x.rule_id == "qi_cluster").unwrap();
    for class in ["age", "occupation", "location", "family"] {
        assert!(cluster.matched.contains(class), "{}", cluster.matched);
    }
}

#[test]
fn empty_answer_accepted_with_warning() {
    let rules = ValidatorRuleSet::builtin(Domain::Finance);
    let v = validate_borderline(&borderline(""), &rules);
    assert!(v.accepted);
    assert_eq!(v.warnings, vec!["empty answer".to_string()]);
}

#[test]
fn rule_file_loads_from_disk() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/rules/law.toml");
    let rs = ValidatorRuleSet::load(&path).unwrap();
    assert_eq!(rs.names.len(), 131);
    assert!(rs.domain_rules.iter().any(|r| r.id == "docket"));
    assert!(rs.universal_rules.iter().any(|r| r.id == "ssn"));
}

#[test]
fn verdicts_are_deterministic() {
    let rules = ValidatorRuleSet::builtin(Domain::Finance);
    let r = borderline("Card 4111111111111111 and a 40-year-old banker from Reno.");
    assert_eq!(validate_borderline(&r, &rules), validate_borderline(&r, &rules));
}
