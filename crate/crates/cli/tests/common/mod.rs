#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_drugsent");

pub fn drugsent(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), stderr(out));
}

pub fn fixture_checkpoint(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

const NEGATIVE: [&str; 6] = ["awful", "nausea", "worse", "terrible", "pain", "stopped"];
const NEUTRAL: [&str; 6] = ["okay", "mild", "some", "average", "unsure", "mixed"];
const POSITIVE: [&str; 6] = ["great", "relief", "better", "amazing", "helped", "love"];
const FILLER: [&str; 8] = ["the", "pill", "i", "took", "it", "for", "weeks", "doctor"];

/// Deterministic linear congruential stream.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self, n: usize) -> usize {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 33) % n as u64) as usize
    }
}

/// Raw review file in the public seven-column layout. Ratings cycle so that
/// each class count is a multiple of ten when `n` is a multiple of 100.
/// Returns the (negative, neutral, positive) counts.
pub fn write_raw(path: &Path, n: usize, seed: u64) -> (usize, usize, usize) {
    let mut rng = Lcg(seed);
    // per 10 rows: ratings 1,2,3,4 | 5,6,7,8 | 9,10
    let ratings = [1, 5, 9, 2, 6, 10, 3, 7, 4, 8];
    let mut out = String::from("\tdrugName\tcondition\treview\trating\tdate\tusefulCount\n");
    let mut counts = (0, 0, 0);
    for i in 0..n {
        let rating = ratings[i % 10];
        let lexicon = match rating {
            1..=4 => {
                counts.0 += 1;
                &NEGATIVE
            }
            5..=8 => {
                counts.1 += 1;
                &NEUTRAL
            }
            _ => {
                counts.2 += 1;
                &POSITIVE
            }
        };
        let mut words = Vec::new();
        for _ in 0..3 + rng.next(8) {
            if rng.next(3) == 0 {
                words.push(lexicon[rng.next(lexicon.len())]);
            } else {
                words.push(FILLER[rng.next(FILLER.len())]);
            }
        }
        words.push(lexicon[rng.next(lexicon.len())]);
        let review = format!("\"&quot;{} it&#039;s fine&quot;\"", words.join(" "));
        writeln!(out, "{}\tDrug{}\tCondition\t{review}\t{rating}\tJanuary 1, 2015\t{}", 1000 + i, i % 7, i % 13)
            .unwrap();
    }
    std::fs::write(path, out).unwrap();
    counts
}

/// word2vec text file over the synthetic vocabulary; sentiment words get a
/// signal in the first three dimensions.
pub fn write_embeddings(path: &Path) {
    let mut rows = Vec::new();
    for (class, lexicon) in [NEGATIVE, NEUTRAL, POSITIVE].iter().enumerate() {
        for (j, w) in lexicon.iter().enumerate() {
            let mut v = [0.0f64; 8];
            v[class] = 1.0;
            v[3 + j % 5] = 0.25;
            rows.push((w.to_string(), v));
        }
    }
    for (j, w) in FILLER.iter().chain(&["s", "quot", "fine"]).enumerate() {
        let mut v = [0.0f64; 8];
        v[3 + j % 5] = 0.5;
        v[(j + 1) % 3] = 0.1;
        rows.push((w.to_string(), v));
    }
    let mut out = format!("{} 8\n", rows.len());
    for (w, v) in rows {
        let nums: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
        writeln!(out, "{w} {}", nums.join(" ")).unwrap();
    }
    std::fs::write(path, out).unwrap();
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Prepares a synthetic corpus into `dir/prepared`.
pub fn prepared_corpus(dir: &Path, n_train: usize, n_test: usize, fraction: f64) -> PathBuf {
    let train = dir.join("raw_train.tsv");
    let test = dir.join("raw_test.tsv");
    write_raw(&train, n_train, 11);
    write_raw(&test, n_test, 12);
    let out = dir.join("prepared");
    let fraction = fraction.to_string();
    assert_ok(&drugsent(&[
        "prepare",
        "--train-file",
        path_str(&train),
        "--test-file",
        path_str(&test),
        "--out",
        path_str(&out),
        "--fraction",
        &fraction,
    ]));
    out
}

/// A small CNN run config over `prepared`.
pub fn cnn_config(dir: &Path, prepared: &Path, embeddings: &Path, epochs: usize) -> PathBuf {
    let text = format!(
        "[data]\ntrain = {:?}\ntest = {:?}\n\n[model]\nkind = \"cnn_static\"\nembeddings = {:?}\n\
         filters_per_width = 8\nfilter_widths = [1, 2, 3]\nhidden_size = 8\nmax_len = 24\n\n\
         [train]\nepochs_max = {epochs}\nbatch_size = 16\nlearning_rate = 0.01\n",
        prepared.join("train.tsv"),
        prepared.join("test.tsv"),
        embeddings,
    );
    let path = dir.join("cnn.toml");
    std::fs::write(&path, text).unwrap();
    path
}
