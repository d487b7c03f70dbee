//! Replays the checked-in fuzz corpus seeds through the parsers the fuzz
//! targets exercise; every seed must parse and round-trip, and byte-level
//! mutations of the seeds must never panic.

use std::fs;
use std::path::{Path, PathBuf};

use invmcmc_cli::ExperimentConfig;
use invmcmc_models::advection_diffusion::{ObservationSet, Scenario};
use invmcmc_models::bmds::DissimilarityMatrix;
use invmcmc_models::ctmc::CtmcObservations;
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed_"))
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds_parse_and_round_trip() {
    for (path, bytes) in seeds("config_json") {
        let config = ExperimentConfig::from_json(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(ExperimentConfig::from_json(&config.to_json()).unwrap(), config);
    }
}

#[test]
fn scenario_seeds_parse() {
    let all = seeds("scenario_json");
    for (path, bytes) in &all {
        Scenario::from_json(std::str::from_utf8(bytes).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let default = all.iter().find(|(p, _)| p.ends_with("seed_default.json")).unwrap();
    assert_eq!(
        Scenario::from_json(std::str::from_utf8(&default.1).unwrap()).unwrap(),
        Scenario::default()
    );
}

#[test]
fn ctmc_seeds_parse_and_round_trip() {
    for (path, bytes) in seeds("ctmc_csv") {
        let (&states, csv) = bytes.split_first().unwrap();
        let initial = CtmcObservations::uniform_initial(2 + states as usize % 8);
        let obs =
            CtmcObservations::read_csv(csv, initial.clone()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        assert_eq!(CtmcObservations::read_csv(&buf[..], initial).unwrap(), obs);
    }
}

#[test]
fn dissimilarity_seeds_parse_and_round_trip() {
    for (path, bytes) in seeds("dissimilarity_csv") {
        let delta = DissimilarityMatrix::read_csv(&bytes[..]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut buf = Vec::new();
        delta.write_csv(&mut buf).unwrap();
        assert_eq!(DissimilarityMatrix::read_csv(&buf[..]).unwrap(), delta);
    }
}

#[test]
fn observation_seeds_parse_and_round_trip() {
    for (path, bytes) in seeds("observation_csv") {
        let obs = ObservationSet::read_csv(&bytes[..], 0.4).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        assert_eq!(ObservationSet::read_csv(&buf[..], 0.4).unwrap(), obs);
    }
}

#[derive(Debug, Clone)]
enum Mutation {
    Flip(usize, u8),
    Insert(usize, Vec<u8>),
    Delete(usize, usize),
}

fn mutate(mut bytes: Vec<u8>, mutations: &[Mutation]) -> Vec<u8> {
    for m in mutations {
        let n = bytes.len().max(1);
        match m {
            Mutation::Flip(i, b) => {
                if let Some(x) = bytes.get_mut(i % n) {
                    *x ^= b;
                }
            }
            Mutation::Insert(i, chunk) => {
                let at = (i % n).min(bytes.len());
                bytes.splice(at..at, chunk.iter().copied());
            }
            Mutation::Delete(i, len) => {
                let at = (i % n).min(bytes.len());
                let end = (at + len).min(bytes.len());
                bytes.drain(at..end);
            }
        }
    }
    bytes
}

fn mutation() -> impl Strategy<Value = Mutation> {
    let tokens = prop::sample::select(vec![
        b"-".to_vec(),
        b"1e308".to_vec(),
        b"NaN".to_vec(),
        b"-9223372036854775808".to_vec(),
        b"18446744073709551615".to_vec(),
        b",".to_vec(),
        b"\n".to_vec(),
        b"\"".to_vec(),
        b"[]".to_vec(),
        b"{}".to_vec(),
        b"0".to_vec(),
    ]);
    prop_oneof![
        (any::<usize>(), 1u8..).prop_map(|(i, b)| Mutation::Flip(i, b)),
        (any::<usize>(), tokens).prop_map(|(i, t)| Mutation::Insert(i, t)),
        (any::<usize>(), 0usize..8).prop_map(|(i, n)| Mutation::Delete(i, n)),
    ]
}

fn all_seeds() -> Vec<(&'static str, Vec<u8>)> {
    [
        "config_json",
        "scenario_json",
        "ctmc_csv",
        "dissimilarity_csv",
        "observation_csv",
    ]
    .into_iter()
    .flat_map(|t| seeds(t).into_iter().map(move |(_, b)| (t, b)))
    .collect()
}

fn exercise(target: &str, bytes: &[u8]) {
    match target {
        "config_json" => {
            if let Ok(text) = std::str::from_utf8(bytes) {
                if let Ok(c) = ExperimentConfig::from_json(text) {
                    assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
                }
            }
        }
        "scenario_json" => {
            if let Ok(text) = std::str::from_utf8(bytes) {
                let _ = Scenario::from_json(text);
            }
        }
        "ctmc_csv" => {
            if let Some((&states, csv)) = bytes.split_first() {
                let initial = CtmcObservations::uniform_initial(2 + states as usize % 8);
                if let Ok(obs) = CtmcObservations::read_csv(csv, initial.clone()) {
                    let mut buf = Vec::new();
                    obs.write_csv(&mut buf).unwrap();
                    assert_eq!(CtmcObservations::read_csv(&buf[..], initial).unwrap(), obs);
                }
            }
        }
        "dissimilarity_csv" => {
            if let Ok(delta) = DissimilarityMatrix::read_csv(bytes) {
                let mut buf = Vec::new();
                delta.write_csv(&mut buf).unwrap();
                assert_eq!(DissimilarityMatrix::read_csv(&buf[..]).unwrap(), delta);
            }
        }
        "observation_csv" => {
            if let Ok(obs) = ObservationSet::read_csv(bytes, 0.4) {
                let mut buf = Vec::new();
                obs.write_csv(&mut buf).unwrap();
                assert_eq!(ObservationSet::read_csv(&buf[..], 0.4).unwrap(), obs);
            }
        }
        other => panic!("unknown target {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn mutated_seeds_never_panic(pick in any::<prop::sample::Index>(), mutations in prop::collection::vec(mutation(), 1..6)) {
        let all = all_seeds();
        let (target, seed) = &all[pick.index(all.len())];
        exercise(target, &mutate(seed.clone(), &mutations));
    }
}
