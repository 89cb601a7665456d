//! Acceptance criterion 11: the `table1` command reproduces the checked-in
//! symbolic-evaluation fixture over the default 5x5 grid.

use std::process::Command;
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fsl"))
}

#[derive(Debug, PartialEq)]
struct Row {
    s: String,
    beta: String,
    regime: String,
    family: String,
    budget: String,
    exponent: f64,
    log_exponent: f64,
}

fn parse_rows(text: &str) -> Vec<Row> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 7, "bad row: {line}");
        out.push(Row {
            s: format!("{}", f[0].parse::<f64>().unwrap()),
            beta: format!("{}", f[1].parse::<f64>().unwrap()),
            regime: f[2].to_string(),
            family: f[3].to_string(),
            budget: f[4].to_string(),
            exponent: f[5].parse().unwrap(),
            log_exponent: f[6].parse().unwrap(),
        });
    }
    out
}

/// Criterion 11: cmd_table1 output matches the fixture for all 6 cells over
/// the 5x5 (s, β) grid, including the regime boundary s = 0.5, β = 2;
/// runtime < 1 s.
#[test]
fn acceptance_11_table1_matches_fixture() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["table1", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let got = parse_rows(&std::fs::read_to_string(dir.path().join("table1.csv")).unwrap());
    let expected = parse_rows(include_str!("fixtures/table1_expected.csv"));
    assert_eq!(got.len(), expected.len(), "row count");
    assert_eq!(got.len(), 150);
    let mut boundary_seen = false;
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!((&g.s, &g.beta, &g.regime), (&e.s, &e.beta, &e.regime), "{g:?} vs {e:?}");
        assert_eq!((&g.family, &g.budget), (&e.family, &e.budget), "{g:?} vs {e:?}");
        assert!(
            (g.exponent - e.exponent).abs() <= 1e-12,
            "exponent mismatch: {g:?} vs {e:?}"
        );
        assert!(
            (g.log_exponent - e.log_exponent).abs() <= 1e-12,
            "log exponent mismatch: {g:?} vs {e:?}"
        );
        if g.s == "0.5" && g.beta == "2" {
            assert_eq!(g.regime, "easy", "boundary s = 1 - 1/beta counts as easy");
            boundary_seen = true;
        }
    }
    assert!(boundary_seen, "grid must include the regime boundary point");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1.0, "runtime {secs:.2}s exceeds 1s");
    println!("criterion 11 pass: 150 fixture rows match to 1e-12, {secs:.2}s");
}
