//! Sample a specification, render its prompt, then run a small campaign
//! against an in-process generator and print the yield ledger.

use std::collections::BTreeMap;
use std::sync::Arc;

use qiguard::embedding::EndpointError;
use qiguard::record::{AdversarialMode, Domain, Label, Record};
use qiguard::synth::campaign::CampaignInputs;
use qiguard::synth::plan::{BatchSizes, Roles};
use qiguard::synth::{
    render_prompt, run_campaign, sample_spec, CampaignPlan, Generator, GeneratorEndpoint, SamplingParams, SeedCorpus,
    TemplateSet, K_PRIOR,
};
use qiguard::validators::ValidatorRuleSet;
use rand::SeedableRng;

/// Echoes a fixed answer; every third seed leaks a phone number.
struct Canned;

impl Generator for Canned {
    fn generate(&self, _prompt: &str, _: &SamplingParams, seed: u64) -> Result<String, EndpointError> {
        let mut text = "A night-shift pharmacist in her sixties from a lakeside town asked about this.".to_string();
        if seed % 3 == 0 {
            text.push_str(" Call 555-867-5309.");
        }
        Ok(text)
    }
}

fn seed_record(i: usize, q: &str, a: &str) -> Record {
    Record {
        id: format!("seed-{i}"),
        domain: Domain::Medical,
        question: q.into(),
        answer: a.into(),
        label: Label::Safe,
        generator: None,
        axes: None,
        subtype: None,
        source: "seed".into(),
        extra: BTreeMap::new(),
    }
}

fn main() -> qiguard::Result<()> {
    let seeds = SeedCorpus::new(
        Domain::Medical,
        vec![
            seed_record(
                1,
                "How long does a sprained ankle take to heal?",
                "Mild sprains improve within two weeks.",
            ),
            seed_record(
                2,
                "Is it safe to exercise with a cold?",
                "Light activity is fine when symptoms stay above the neck.",
            ),
        ],
    )?;
    let rules = ValidatorRuleSet::builtin(Domain::Medical);
    let templates = TemplateSet::builtin();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let spec = sample_spec("demo-1", &seeds, AdversarialMode::IndirectQi, &K_PRIOR, &mut rng);
    let prompt = render_prompt(&spec, &templates, &rules)?;
    println!(
        "spec {:?}\n--- prompt ---\n{}\n---",
        spec.axes,
        prompt.lines().take(8).collect::<Vec<_>>().join("\n")
    );

    let endpoint = |name: &str| GeneratorEndpoint {
        name: name.into(),
        base_url: "local".into(),
        model_id: name.into(),
        max_in_flight: 2,
        timeout_secs: 1.0,
        api_key_env: None,
    };
    let plan = CampaignPlan {
        domain: Domain::Medical,
        seed: 3,
        seed_corpus: "unused".into(),
        rules: None,
        templates: None,
        k_prior: K_PRIOR,
        sampling: SamplingParams::default(),
        generators: ["a", "b", "c"].map(endpoint).to_vec(),
        roles: Roles {
            training: vec!["a".into()],
            held_out: "b".into(),
            borderline_aug: "b".into(),
            borderline_eval: "c".into(),
        },
        batches: BatchSizes {
            baseline: 12,
            indirect_qi: 6,
            mixed: 6,
            held_out_baseline: 4,
            borderline_aug: 0,
            borderline_eval: 0,
        },
        retry_budget: Default::default(),
        network_attempts: 1,
        network_backoff_ms: 1,
    };
    let canned: Arc<dyn Generator> = Arc::new(Canned);
    let inputs = CampaignInputs {
        generators: plan
            .generators
            .iter()
            .map(|g| (g.name.clone(), Arc::clone(&canned)))
            .collect(),
        rules,
        templates,
        seeds,
    };
    let dir = tempfile::tempdir().expect("temp dir");
    let out = run_campaign(&plan, &inputs, dir.path(), false)?;
    print!("{}", out.ledger.to_json());
    Ok(())
}
