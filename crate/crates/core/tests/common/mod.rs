#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psi_core::commands::{Backend, Runner, TRANSCRIPT_FILE};
use psi_core::config::PipelineConfig;
use psi_core::gateway::{MockScript, RecordedRequest};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn mock_script() -> MockScript {
    MockScript::from_json(&fs::read(fixture("mock_script.json")).unwrap()).unwrap()
}

/// Small offline configuration: 8 seed instances, 3 subsets of 3, target 60.
pub fn small_config(run_dir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.paths.seed_file = Some(fixture("seed_8.jsonl"));
    c.paths.output_dir = Some(run_dir.to_path_buf());
    c.target_initial_size = 20;
    c.target_dataset_size = 60;
    c.principles.subsets = 3;
    c.principles.subset_size = 3;
    c.rng_seed = 7;
    c
}

pub fn runner(config: PipelineConfig) -> Runner {
    Runner::new(config, Backend::Mock(mock_script()), false).unwrap()
}

pub fn transcript(run_dir: &Path) -> Vec<RecordedRequest> {
    let path = run_dir.join(TRANSCRIPT_FILE);
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// User-message contents of a recorded chat request body.
pub fn message_texts(body: &str) -> Vec<String> {
    let v: serde_json::Value = serde_json::from_str(body).unwrap();
    v["messages"]
        .as_array()
        .map(|ms| {
            ms.iter()
                .filter_map(|m| m["content"].as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default()
}

pub fn psi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn write_knowledge(dir: &Path) -> Vec<String> {
    fs::create_dir_all(dir).unwrap();
    let bodies = vec![
        "Patient reports recurring migraines after night shifts at the zorvane clinic.".to_string(),
        "Dosage table for quilbromine: 5 mg twice daily for adults.".to_string(),
    ];
    fs::write(dir.join("note_a.txt"), &bodies[0]).unwrap();
    fs::write(dir.join("note_b.txt"), &bodies[1]).unwrap();
    bodies
}

/// Checks one entry of `fixtures/parser_cases.json`; `Err` describes the mismatch.
pub fn check_parser_case(case: &serde_json::Value) -> Result<(), String> {
    use psi_core::instances::parse_generated_tasks;
    use psi_core::principles::{parse_reflection, strip_principle_label};

    let name = case["name"].as_str().unwrap_or("?");
    let text = case["text"].as_str().ok_or("fixture without text")?;
    let expect = &case["expect"];
    let want_error = expect["error"].as_bool().unwrap_or(false);
    match case["kind"].as_str() {
        Some("generator") => match parse_generated_tasks(text) {
            Err(_) if want_error => Ok(()),
            Err(e) => Err(format!("{name}: unexpected error {e}")),
            Ok(_) if want_error => Err(format!("{name}: expected an error")),
            Ok(parsed) => {
                let got: Vec<Vec<String>> = parsed
                    .tasks
                    .iter()
                    .map(|t| vec![t.instruction.clone(), t.input.clone(), t.output.clone()])
                    .collect();
                let want: Vec<Vec<String>> = serde_json::from_value(expect["tasks"].clone()).unwrap();
                let skips: Vec<&str> = parsed.skips.iter().map(|s| s.reason.as_str()).collect();
                let want_skips: Vec<String> =
                    serde_json::from_value(expect["skips"].clone()).unwrap_or_default();
                if got != want {
                    return Err(format!("{name}: tasks {got:?} != {want:?}"));
                }
                if skips != want_skips {
                    return Err(format!("{name}: skips {skips:?} != {want_skips:?}"));
                }
                Ok(())
            }
        },
        Some("reflector") => match parse_reflection(text) {
            None if want_error => Ok(()),
            None => Err(format!("{name}: unexpected parse failure")),
            Some(_) if want_error => Err(format!("{name}: expected a failure")),
            Some(r) => {
                let want: Vec<String> = serde_json::from_value(expect["insights"].clone()).unwrap();
                (r.insights == want)
                    .then_some(())
                    .ok_or_else(|| format!("{name}: insights {:?} != {want:?}", r.insights))
            }
        },
        Some("summary") => {
            let got = strip_principle_label(text);
            match (got.is_empty(), want_error) {
                (true, true) => Ok(()),
                (true, false) => Err(format!("{name}: empty principle")),
                (false, true) => Err(format!("{name}: expected an empty principle, got {got:?}")),
                (false, false) => (got == expect["principle"].as_str().unwrap_or_default())
                    .then_some(())
                    .ok_or_else(|| format!("{name}: principle {got:?}")),
            }
        }
        other => Err(format!("{name}: unknown kind {other:?}")),
    }
}

pub fn parser_cases() -> Vec<serde_json::Value> {
    serde_json::from_slice(&fs::read(fixture("parser_cases.json")).unwrap()).unwrap()
}

/// Dataset files used for the round-trip law.
pub fn dataset_fixtures() -> Vec<(String, Vec<u8>)> {
    let mut out = vec![("seed_8".to_string(), fs::read(fixture("seed_8.jsonl")).unwrap())];
    out.push((
        "sentinels_and_whitespace".into(),
        br#"{"instruction": "  Name a color. ", "input": "<noinput>", "output": "Red"}
{"instruction": "Echo it.", "input": " <noinput> ", "output": "ok"}
{"instruction": "Add.", "output": "3"}
"#
        .to_vec(),
    ));
    out.push((
        "json_array".into(),
        br#"[{"instruction": "Q1", "input": "a", "output": "b"}, {"instruction": "Q2", "input": "", "output": "c"}]"#.to_vec(),
    ));
    out
}

/// Requests issued by each step of the ablation matrix, in issue order.
pub struct MatrixRun {
    pub steps: Vec<(String, Vec<RecordedRequest>)>,
    pub pool_n: usize,
    pub knowledge: Vec<String>,
}

impl MatrixRun {
    pub fn step(&self, name: &str) -> &[RecordedRequest] {
        &self.steps.iter().find(|(n, _)| n == name).expect("step ran").1
    }

    pub fn all(&self) -> impl Iterator<Item = &RecordedRequest> {
        self.steps.iter().flat_map(|(_, r)| r)
    }
}

/// Full pipeline and every ablation mode, with a knowledge directory attached.
pub fn run_matrix(root: &Path) -> MatrixRun {
    use psi_core::config::AblationSpec;

    let knowledge = write_knowledge(&root.join("kb"));
    let run_dir = root.join("run");
    let mut cfg = small_config(&run_dir);
    cfg.paths.knowledge_dir = Some(root.join("kb"));
    cfg.target_dataset_size = 40;
    let mut r = runner(cfg);
    let mut steps = Vec::new();
    let mut seen = 0;
    let mut take = |r: &Runner, name: &str, steps: &mut Vec<(String, Vec<RecordedRequest>)>| {
        let t = r.mock().unwrap().transcript();
        steps.push((name.to_string(), t[seen..].to_vec()));
        seen = t.len();
    };
    r.expand().unwrap();
    take(&r, "expand", &mut steps);
    r.principles(false, false).unwrap();
    take(&r, "principles", &mut steps);
    r.generate(None).unwrap();
    take(&r, "generate", &mut steps);
    let specs = [
        AblationSpec::WoInitial,
        AblationSpec::WoSample,
        AblationSpec::WoCluster,
        AblationSpec::LeaveOneOut { index: None },
        AblationSpec::SizeSweep { sizes: vec![20, 40] },
    ];
    for spec in &specs {
        r.ablate(spec).unwrap();
        take(&r, spec.dir_name(), &mut steps);
    }
    let pool = psi_core::model::load_pool(&fs::read(run_dir.join("pool.json")).unwrap()).unwrap();
    MatrixRun {
        steps,
        pool_n: pool.n,
        knowledge,
    }
}

/// Instructions quoted in a reflection prompt's `### Task k` blocks.
pub fn quoted_instructions(prompt: &str) -> Vec<String> {
    let lines: Vec<&str> = prompt.lines().collect();
    lines
        .windows(2)
        .filter(|w| w[0].starts_with("### Task "))
        .filter_map(|w| w[1].strip_prefix("Instruction: ").map(str::to_string))
        .collect()
}

pub fn is_reflection(r: &RecordedRequest) -> bool {
    r.role == psi_core::accounting::Role::Reflector && r.request_id.starts_with("reflect-")
}
