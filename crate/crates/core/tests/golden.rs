//! Golden files under fixtures/golden. Regenerate with UPDATE_GOLDEN=1.

use std::fs;
use std::path::PathBuf;

use reward_discovery::llm::{render_prompt, TemplateId};
use reward_discovery::problems::{make_suite, SuiteManifest};
use serde::{Deserialize, Serialize};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden").join(name)
}

fn update() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

fn check_text(name: &str, actual: &str) {
    let path = golden(name);
    if update() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("{} missing; run with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(actual, expected, "{name} drifted");
}

#[derive(Serialize, Deserialize)]
struct SuiteGolden {
    manifest: SuiteManifest,
    probe: Vec<f64>,
    train_values: Vec<f64>,
    test_values: Vec<f64>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn suite_manifest_and_landscapes() {
    let suite = make_suite(10, 7).unwrap();
    let probe: Vec<f64> = (0..10).map(|i| (i % 5) as f64 - 2.0 + 0.25).collect();
    let values = |xs: &[reward_discovery::problems::ProblemInstance]| -> Vec<f64> { xs.iter().map(|p| p.evaluate(&probe).unwrap()).collect() };
    let actual = SuiteGolden {
        manifest: suite.manifest(),
        train_values: values(&suite.train_instances),
        test_values: values(&suite.test_instances),
        probe,
    };
    let path = golden("suite_d10_seed7.json");
    if update() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string_pretty(&actual).unwrap() + "\n").unwrap();
        return;
    }
    let expected: SuiteGolden = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(actual.manifest, expected.manifest);
    assert_eq!(actual.probe, expected.probe);
    for (a, e) in actual.train_values.iter().chain(&actual.test_values).zip(expected.train_values.iter().chain(&expected.test_values)) {
        assert!(close(*a, *e), "{a} vs {e}");
    }
    let rebuilt = reward_discovery::problems::ProblemSuite::from_manifest(&expected.manifest).unwrap();
    assert_eq!(rebuilt, suite);
}

#[test]
fn rendered_prompts() {
    for id in TemplateId::ALL {
        let vars = id
            .template()
            .required()
            .iter()
            .map(|k| (k.clone(), format!("<{k}>")))
            .collect();
        check_text(&format!("prompts/{}.txt", id.as_str()), &render_prompt(id, &vars).unwrap());
    }
}
