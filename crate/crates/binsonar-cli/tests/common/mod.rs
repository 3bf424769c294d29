//! Shared fixtures for the CLI and acceptance suites.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use binsonar::classify::{confusion_matrix, EvalResult, PredictionRecord};
use binsonar::corpus::{Manifest, SampleId, SampleRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn binsonar_bin() -> &'static str {
    env!("CARGO_BIN_EXE_binsonar")
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    run_with_env(dir, args, &[])
}

pub fn run_with_env(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(binsonar_bin());
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn binsonar")
}

pub fn assert_success(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Write files plus a labels CSV into `dir`; returns the CSV path.
pub fn write_corpus(dir: &Path, files: &[(&str, Vec<u8>, &str)]) -> PathBuf {
    let mut rows = vec!["filename,label".to_string()];
    for (name, bytes, label) in files {
        std::fs::write(dir.join(name), bytes).expect("write corpus file");
        rows.push(format!("{name},{label}"));
    }
    let labels = dir.join("labels.csv");
    std::fs::write(&labels, rows.join("\n") + "\n").expect("write labels");
    labels
}

/// A minimal PE32 image whose buffer ends exactly at the section table.
pub fn minimal_pe32() -> Vec<u8> {
    let mut pe = vec![0u8; 64];
    pe[0] = b'M';
    pe[1] = b'Z';
    pe[0x3C..0x40].copy_from_slice(&64u32.to_le_bytes());

    pe.extend_from_slice(b"PE\0\0");
    pe.extend_from_slice(&0x014Cu16.to_le_bytes()); // machine: i386
    pe.extend_from_slice(&2u16.to_le_bytes()); // two sections
    pe.extend_from_slice(&0u32.to_le_bytes());
    pe.extend_from_slice(&0u32.to_le_bytes());
    pe.extend_from_slice(&0u32.to_le_bytes());
    pe.extend_from_slice(&96u16.to_le_bytes()); // optional header size
    pe.extend_from_slice(&0x0102u16.to_le_bytes()); // image characteristics

    let mut opt = vec![0u8; 96];
    opt[0..2].copy_from_slice(&0x10Bu16.to_le_bytes());
    opt[68..70].copy_from_slice(&3u16.to_le_bytes()); // subsystem
    opt[72..76].copy_from_slice(&0x0010_0000u32.to_le_bytes());
    opt[76..80].copy_from_slice(&0x1000u32.to_le_bytes()); // stack commit
    opt[80..84].copy_from_slice(&0x0010_0000u32.to_le_bytes());
    opt[84..88].copy_from_slice(&0x2000u32.to_le_bytes()); // heap commit
    pe.extend_from_slice(&opt);

    for (i, (va, raw, flags)) in [
        (0x1000u32, 0x200u32, 0x6000_0020u32),
        (0x2000, 0x300, 0xC000_0040),
    ]
    .iter()
    .enumerate()
    {
        let mut section = vec![0u8; 40];
        section[0..5].copy_from_slice(if i == 0 { b".text" } else { b".data" });
        section[8..12].copy_from_slice(&0x1000u32.to_le_bytes());
        section[12..16].copy_from_slice(&va.to_le_bytes());
        section[16..20].copy_from_slice(&raw.to_le_bytes());
        section[36..40].copy_from_slice(&flags.to_le_bytes());
        pe.extend_from_slice(&section);
    }
    pe
}

/// Deterministic sample id for synthetic prediction corpora.
pub fn sample_id(i: usize) -> SampleId {
    SampleId::from_content(format!("synthetic-sample-{i}").as_bytes())
}

/// Build an evaluation result over `n` samples where exactly the listed
/// sample indices are misclassified.
pub fn result_with_errors(name: &str, n: usize, wrong: &[usize]) -> EvalResult {
    let classes = vec!["ben".to_string(), "mal".to_string()];
    let mut predictions: Vec<PredictionRecord> = (0..n)
        .map(|i| {
            let truth = if i % 2 == 0 { "ben" } else { "mal" };
            let pred = if wrong.contains(&i) {
                if truth == "ben" {
                    "mal"
                } else {
                    "ben"
                }
            } else {
                truth
            };
            PredictionRecord {
                id: sample_id(i),
                true_label: truth.to_string(),
                predicted_label: pred.to_string(),
                fold: i % 10,
            }
        })
        .collect();
    predictions.sort_by(|a, b| a.id.cmp(&b.id));
    let correct = predictions.iter().filter(|p| p.is_correct()).count();
    let accuracy = correct as f64 / n as f64;
    let confusion = confusion_matrix(&predictions, &classes).unwrap();
    EvalResult {
        feature_name: name.to_string(),
        classifier: "knn".to_string(),
        seed: 0,
        folds: 10,
        accuracy,
        classes,
        confusion,
        predictions,
    }
}

/// Periodic byte-pattern generators with per-file noise, one per family.
pub fn family_bytes(family: usize, file_index: usize, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64((family as u64) << 32 | file_index as u64);
    let mut bytes = Vec::with_capacity(len);
    for i in 0..len {
        let base = match family {
            0 => ((i * 8) % 256) as u8,                          // fast sawtooth
            1 => (128.0 + 120.0 * ((i as f64) / 64.0 * std::f64::consts::TAU).sin()) as u8,
            2 => {
                // period-16 square wave with a slow drift
                if (i / 8) % 2 == 0 {
                    (40 + (i / 512) % 32) as u8
                } else {
                    (215 - (i / 512) % 32) as u8
                }
            }
            _ => rng.gen(),
        };
        // sparse per-file noise so variants differ
        let noisy = if rng.gen_bool(0.05) {
            base ^ rng.gen_range(1..16u8)
        } else {
            base
        };
        bytes.push(noisy);
    }
    bytes
}

/// Uniform-random "benign" filler.
pub fn benign_bytes(file_index: usize, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF_0000 + file_index as u64);
    (0..len).map(|_| rng.gen()).collect()
}

/// In-memory manifest over (id, label, len) triples, sorted by id.
pub fn manifest_from(entries: &[(SampleId, String, usize)], seed: u64) -> Manifest {
    let mut samples: Vec<SampleRecord> = entries
        .iter()
        .map(|(id, label, len)| SampleRecord {
            id: id.clone(),
            path: PathBuf::from(format!("mem://{id}")),
            label: label.clone(),
            size: *len as u64,
        })
        .collect();
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let classes = samples.iter().map(|s| s.label.clone()).collect();
    Manifest {
        samples,
        classes,
        seed,
    }
}
