//! Seeded synthetic instruction datasets for demos and tests.
//!
//! Samples come from three sources with separate word pools. `code` samples
//! are short and repetitive, `math` samples long and varied, `general` sits
//! in between, so every metric orders the sources differently enough to be
//! visible in traces and composition reports.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, InstructionSample};

pub const SOURCES: [&str; 3] = ["code", "math", "general"];

const CODE: &[&str] = &[
    "fn", "let", "x", "=", "return", "print", "(", ")", "loop", "if", "list", "add",
];
const MATH: &[&str] = &[
    "sum", "prime", "integer", "solve", "equation", "root", "square", "divide", "number",
    "fraction", "angle", "triangle", "area", "volume", "proof", "limit", "series", "matrix",
    "vector", "product", "factor", "remainder", "digit", "ratio", "percent", "mean",
    "median", "probability", "graph", "slope",
];
const GENERAL: &[&str] = &[
    "the", "a", "story", "about", "city", "write", "friend", "letter", "explain", "why",
    "weather", "travel", "book", "music", "food", "today", "people", "idea",
];

fn words(rng: &mut ChaCha8Rng, pool: &[&str], len: usize) -> String {
    (0..len)
        .map(|_| *pool.choose(rng).expect("pool is non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` samples cycling through [`SOURCES`].
pub fn dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let source = SOURCES[i % SOURCES.len()];
            let (pool, lens) = match source {
                "code" => (CODE, (2, 4, 3, 8)),
                "math" => (MATH, (4, 8, 14, 30)),
                _ => (GENERAL, (3, 6, 6, 16)),
            };
            let il = rng.random_range(lens.0..=lens.1);
            let ol = rng.random_range(lens.2..=lens.3);
            let instruction = words(&mut rng, pool, il);
            let output = words(&mut rng, pool, ol);
            InstructionSample::single(i, &instruction, &output, source)
        })
        .collect();
    Dataset::new(samples)
}

/// The dataset as JSON lines, the format accepted by the loader.
pub fn to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for s in dataset.iter() {
        let row = serde_json::json!({
            "id": s.id,
            "instruction": s.instruction,
            "output": s.output,
            "source": s.source,
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_dataset;

    #[test]
    fn deterministic_and_loadable() {
        let a = dataset(30, 7);
        let b = dataset(30, 7);
        assert_eq!(to_jsonl(&a), to_jsonl(&b));
        let back = read_dataset(to_jsonl(&a).as_bytes(), Some("x")).unwrap();
        assert_eq!(back.len(), 30);
        assert_eq!(back.get(1).unwrap().source, "math");
    }
}
