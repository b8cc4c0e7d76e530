//! Campaign execution. Every attempt is a pure function of (plan seed,
//! batch, slot, attempt), so a run can stop anywhere and resume from its
//! journal with identical results.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::plan::{BatchMode, BatchPlan, CampaignPlan, GeneratorEndpoint, SamplingParams};
use super::{render_prompt, sample_borderline_spec, sample_spec, GenerationSpec, SeedCorpus, TemplateSet};
use crate::embedding::http::OpenAiClient;
use crate::embedding::{with_retry, EndpointError, RetryPolicy};
use crate::error::{Error, Result};
use crate::record::{parse_record, serialize_record, write_records, Record};
use crate::validators::{validate_record, ValidatorRuleSet};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const LEDGER_FILE: &str = "ledger.json";

/// A text generator endpoint.
pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str, params: &SamplingParams, seed: u64) -> std::result::Result<String, EndpointError>;
}

/// Chat-completions generator over the OpenAI-compatible contract.
pub struct ChatGenerator {
    client: OpenAiClient,
    model_id: String,
}

impl ChatGenerator {
    pub fn new(endpoint: &GeneratorEndpoint) -> Self {
        ChatGenerator {
            client: OpenAiClient::new(
                &endpoint.base_url,
                Duration::from_secs_f64(endpoint.timeout_secs.max(0.0)),
                endpoint.api_key_env.as_deref(),
            ),
            model_id: endpoint.model_id.clone(),
        }
    }
}

impl Generator for ChatGenerator {
    fn generate(&self, prompt: &str, params: &SamplingParams, seed: u64) -> std::result::Result<String, EndpointError> {
        self.client.chat(
            &self.model_id,
            prompt,
            params.temperature,
            params.max_tokens,
            Some(seed),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct YieldEntry {
    pub attempts: u64,
    pub accepts: u64,
    pub rejects: u64,
    /// Each rejected attempt counts once per distinct rule it violated.
    pub rejects_by_rule: BTreeMap<String, u64>,
    pub retries_exhausted: u64,
}

impl YieldEntry {
    pub fn yield_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub planned: u64,
    pub accepted: u64,
    pub dropped: u64,
    /// Accepted records with k = 2, 3, 4.
    pub realized_k: [u64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct YieldLedger {
    /// Keyed by "generator/mode".
    pub entries: BTreeMap<String, YieldEntry>,
    pub batches: BTreeMap<String, BatchSummary>,
}

impl YieldLedger {
    pub fn total_accepts(&self) -> u64 {
        self.entries.values().map(|e| e.accepts).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ledger serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JournalEntry {
    spec_id: String,
    batch: String,
    slot: usize,
    attempt: u32,
    mode: String,
    accepted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    record: Option<String>,
}

/// Everything a campaign needs besides the plan.
pub struct CampaignInputs {
    pub generators: BTreeMap<String, Arc<dyn Generator>>,
    pub rules: ValidatorRuleSet,
    pub templates: TemplateSet,
    pub seeds: SeedCorpus,
}

impl CampaignInputs {
    /// HTTP generators, rule set, templates and seed corpus named by the plan.
    pub fn from_plan(plan: &CampaignPlan) -> Result<Self> {
        let generators = plan
            .generators
            .iter()
            .map(|g| (g.name.clone(), Arc::new(ChatGenerator::new(g)) as Arc<dyn Generator>))
            .collect();
        let rules = match &plan.rules {
            Some(p) => ValidatorRuleSet::load(p)?,
            None => ValidatorRuleSet::builtin(plan.domain),
        };
        let templates = match &plan.templates {
            Some(p) => TemplateSet::load(p)?,
            None => TemplateSet::builtin(),
        };
        let seeds = SeedCorpus::new(plan.domain, crate::record::read_records(&plan.seed_corpus)?)?;
        Ok(CampaignInputs {
            generators,
            rules,
            templates,
            seeds,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub records: Vec<Record>,
    pub ledger: YieldLedger,
    pub record_files: Vec<PathBuf>,
    pub ledger_path: PathBuf,
}

fn attempt_seed(plan_seed: u64, batch: &str, slot: usize, attempt: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(plan_seed.to_le_bytes());
    h.update(batch.as_bytes());
    h.update((slot as u64).to_le_bytes());
    h.update(attempt.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

struct Journal {
    file: File,
}

impl Journal {
    /// Opens the journal, dropping a torn final line left by a crash.
    fn open(path: &Path, resume: bool) -> Result<(Self, Vec<JournalEntry>)> {
        let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        if exists && !resume {
            return Err(Error::Config(format!(
                "{} already exists; resume the campaign or choose a new output directory",
                path.display()
            )));
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut good_len = 0u64;
        if exists {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                match serde_json::from_str::<JournalEntry>(line.trim_end()) {
                    Ok(e) => entries.push(e),
                    Err(_) => break,
                }
                good_len += n as u64;
            }
            let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
            if good_len < len {
                log::warn!("discarding {} trailing journal bytes", len - good_len);
                file.set_len(good_len).map_err(|e| Error::io(path, e))?;
                file.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
            }
        }
        Ok((Journal { file }, entries))
    }

    fn append(&mut self, entries: &[JournalEntry], path: &Path) -> Result<()> {
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e).expect("journal entry serializes"));
            buf.push('\n');
        }
        self.file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
        self.file.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Default, Clone, Copy)]
struct SlotState {
    attempts: u32,
    accepted: bool,
}

/// Outcome of running the remaining attempts of one slot.
struct SlotRun {
    entries: Vec<JournalEntry>,
    paused: Option<String>,
}

struct Runner<'a> {
    plan: &'a CampaignPlan,
    inputs: &'a CampaignInputs,
    network: RetryPolicy,
}

impl Runner<'_> {
    fn spec_for(&self, batch: &BatchPlan, slot: usize, attempt: u32) -> GenerationSpec {
        let seed = attempt_seed(self.plan.seed, &batch.id, slot, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec_id = format!("{}-{slot:06}-a{attempt}", batch.id);
        match batch.mode {
            BatchMode::Borderline => sample_borderline_spec(spec_id, &self.inputs.seeds, &mut rng),
            m => {
                let modes = m.adversarial_modes();
                let mode = modes[rng.random_range(0..modes.len())];
                sample_spec(spec_id, &self.inputs.seeds, mode, &self.plan.k_prior, &mut rng)
            }
        }
    }

    fn run_slot(&self, batch: &BatchPlan, slot: usize, state: SlotState) -> Result<SlotRun> {
        let budget = self.plan.retry_budget.for_mode(batch.mode);
        let generator = self
            .inputs
            .generators
            .get(&batch.generator)
            .ok_or_else(|| Error::Config(format!("no generator named {}", batch.generator)))?;
        let mut entries = Vec::new();
        for attempt in state.attempts..budget {
            let spec = self.spec_for(batch, slot, attempt);
            let prompt = render_prompt(&spec, &self.inputs.templates, &self.inputs.rules)?;
            let call_seed = attempt_seed(self.plan.seed ^ 0x5eed, &batch.id, slot, attempt);
            let text = match with_retry(&self.network, || {
                generator.generate(&prompt, &self.plan.sampling, call_seed)
            }) {
                Ok(t) => t,
                Err(EndpointError::Transient(m) | EndpointError::Fatal(m)) => {
                    return Ok(SlotRun {
                        entries,
                        paused: Some(format!("generator {}: {m}", batch.generator)),
                    });
                }
            };
            let mode = spec
                .axes
                .as_ref()
                .map(|a| a.adversarial_mode.as_str())
                .unwrap_or("borderline")
                .to_string();
            let record = build_record(&spec, batch, slot, attempt, text.trim());
            let rules: Vec<String> = if record.answer.is_empty() {
                vec!["empty_output".to_string()]
            } else {
                let verdict = validate_record(&record, &self.inputs.rules);
                let mut ids: Vec<String> = verdict.violations.into_iter().map(|v| v.rule_id).collect();
                ids.sort();
                ids.dedup();
                ids
            };
            let accepted = rules.is_empty();
            entries.push(JournalEntry {
                spec_id: spec.spec_id.clone(),
                batch: batch.id.clone(),
                slot,
                attempt,
                mode,
                accepted,
                rules,
                record: accepted.then(|| serialize_record(&record)),
            });
            if accepted {
                break;
            }
        }
        Ok(SlotRun { entries, paused: None })
    }
}

fn build_record(spec: &GenerationSpec, batch: &BatchPlan, slot: usize, attempt: u32, answer: &str) -> Record {
    let mut extra = BTreeMap::new();
    extra.insert("batch".to_string(), json!(batch.id));
    extra.insert("split".to_string(), json!(batch.split.as_str()));
    extra.insert("spec_id".to_string(), json!(spec.spec_id));
    extra.insert("seed_record".to_string(), json!(spec.seed_record));
    extra.insert("attempt".to_string(), json!(attempt));
    Record {
        id: format!("{}-{slot:06}", batch.id),
        domain: spec.domain,
        question: spec.seed_question.clone(),
        answer: answer.to_string(),
        label: batch.label(),
        generator: Some(batch.generator.clone()),
        axes: spec.axes.clone(),
        subtype: spec.subtype,
        source: batch.id.clone(),
        extra,
    }
}

/// Rebuilds records and the ledger from journal entries. Order-independent.
fn replay(plan: &CampaignPlan, batches: &[BatchPlan], entries: &[JournalEntry]) -> Result<(Vec<Record>, YieldLedger)> {
    let mut ledger = YieldLedger::default();
    let mut by_slot: BTreeMap<(usize, usize), Vec<&JournalEntry>> = BTreeMap::new();
    let index: HashMap<&str, usize> = batches.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    for e in entries {
        let bi = *index
            .get(e.batch.as_str())
            .ok_or_else(|| Error::Config(format!("journal names unknown batch {}", e.batch)))?;
        by_slot.entry((bi, e.slot)).or_default().push(e);
    }
    for b in batches {
        ledger.batches.insert(
            b.id.clone(),
            BatchSummary {
                planned: b.count as u64,
                ..Default::default()
            },
        );
    }
    let mut records = Vec::new();
    for ((bi, _), mut attempts) in by_slot {
        let batch = &batches[bi];
        attempts.sort_by_key(|e| e.attempt);
        attempts.dedup_by_key(|e| e.attempt);
        let summary = ledger.batches.get_mut(&batch.id).expect("batch present");
        for e in &attempts {
            let entry = ledger
                .entries
                .entry(format!("{}/{}", batch.generator, e.mode))
                .or_default();
            entry.attempts += 1;
            if e.accepted {
                entry.accepts += 1;
                let line = e
                    .record
                    .as_deref()
                    .ok_or_else(|| Error::Config("accepted entry without record".into()))?;
                let r = parse_record(line)?;
                if let Some(k) = r.axes.as_ref().map(|a| a.k()) {
                    summary.realized_k[k - 2] += 1;
                }
                summary.accepted += 1;
                records.push(r);
            } else {
                entry.rejects += 1;
                for rule in &e.rules {
                    *entry.rejects_by_rule.entry(rule.clone()).or_default() += 1;
                }
            }
        }
        let last = attempts.last().expect("slot has attempts");
        let budget = plan.retry_budget.for_mode(batch.mode);
        if !last.accepted && last.attempt + 1 >= budget {
            summary.dropped += 1;
            ledger
                .entries
                .entry(format!("{}/{}", batch.generator, last.mode))
                .or_default()
                .retries_exhausted += 1;
        }
    }
    Ok((records, ledger))
}

/// Runs (or resumes) a campaign into `out_dir`: `journal.jsonl`, one
/// `records/<batch>.jsonl` per batch and `ledger.json`.
///
/// An endpoint that stays unreachable pauses the campaign with
/// [`Error::CampaignPaused`]; rerun with `resume` to continue.
pub fn run_campaign(
    plan: &CampaignPlan,
    inputs: &CampaignInputs,
    out_dir: &Path,
    resume: bool,
) -> Result<CampaignOutcome> {
    plan.validate()?;
    if inputs.seeds.domain != plan.domain || inputs.rules.domain != plan.domain {
        return Err(Error::Config("seed corpus, rules and plan must share a domain".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let journal_path = out_dir.join(JOURNAL_FILE);
    let (mut journal, done) = Journal::open(&journal_path, resume)?;
    let batches = plan.batches();

    let mut states: HashMap<(String, usize), SlotState> = HashMap::new();
    for e in &done {
        let s = states.entry((e.batch.clone(), e.slot)).or_default();
        s.attempts = s.attempts.max(e.attempt + 1);
        s.accepted |= e.accepted;
    }

    let runner = Runner {
        plan,
        inputs,
        network: RetryPolicy {
            attempts: plan.network_attempts,
            base_delay: Duration::from_millis(plan.network_backoff_ms),
        },
    };
    let mut new_entries = Vec::new();
    for batch in &batches {
        let budget = plan.retry_budget.for_mode(batch.mode);
        let pending: Vec<(usize, SlotState)> = (0..batch.count)
            .map(|slot| (slot, states.get(&(batch.id.clone(), slot)).copied().unwrap_or_default()))
            .filter(|(_, s)| !s.accepted && s.attempts < budget)
            .collect();
        let workers = plan.generator(&batch.generator).map(|g| g.max_in_flight).unwrap_or(1);
        for window in pending.chunks(workers * 8) {
            let results: Mutex<Vec<Option<Result<SlotRun>>>> = Mutex::new((0..window.len()).map(|_| None).collect());
            let next = AtomicUsize::new(0);
            std::thread::scope(|s| {
                for _ in 0..workers.min(window.len()) {
                    s.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= window.len() {
                            break;
                        }
                        let (slot, state) = window[i];
                        let out = runner.run_slot(batch, slot, state);
                        results.lock().unwrap()[i] = Some(out);
                    });
                }
            });
            // Journal in slot order so a given interruption point is reproducible.
            let mut paused = None;
            for r in results.into_inner().unwrap() {
                let run = r.expect("every slot ran")?;
                journal.append(&run.entries, &journal_path)?;
                new_entries.extend(run.entries);
                if paused.is_none() {
                    paused = run.paused;
                }
            }
            if let Some(reason) = paused {
                return Err(Error::CampaignPaused(format!(
                    "{reason}; progress saved to {}",
                    journal_path.display()
                )));
            }
        }
    }

    let mut all = done;
    all.extend(new_entries);
    let (records, ledger) = replay(plan, &batches, &all)?;
    let records_dir = out_dir.join("records");
    std::fs::create_dir_all(&records_dir).map_err(|e| Error::io(&records_dir, e))?;
    let mut record_files = Vec::new();
    for b in &batches {
        let path = records_dir.join(format!("{}.jsonl", b.id));
        let batch_records: Vec<Record> = records.iter().filter(|r| r.source == b.id).cloned().collect();
        write_records(&path, &batch_records)?;
        record_files.push(path);
    }
    let ledger_path = out_dir.join(LEDGER_FILE);
    std::fs::write(&ledger_path, ledger.to_json()).map_err(|e| Error::io(&ledger_path, e))?;
    Ok(CampaignOutcome {
        records,
        ledger,
        record_files,
        ledger_path,
    })
}
