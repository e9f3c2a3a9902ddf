use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[serde(alias = "human")]
    User,
    #[serde(alias = "gpt")]
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// One instruction-tuning example.
///
/// Single-turn samples use `instruction`/`input`/`output`; multi-turn samples
/// carry their conversation in `turns` and leave the other fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSample {
    /// Position in the dataset; ids always form `0..len`.
    pub id: usize,
    /// Id given in the source record, if any.
    pub external_id: Option<i64>,
    pub instruction: String,
    pub input: Option<String>,
    pub output: String,
    pub turns: Vec<Turn>,
    pub source: String,
}

impl InstructionSample {
    pub fn single(id: usize, instruction: &str, output: &str, source: &str) -> Self {
        Self {
            id,
            external_id: None,
            instruction: instruction.to_owned(),
            input: None,
            output: output.to_owned(),
            turns: Vec::new(),
            source: source.to_owned(),
        }
    }

    pub fn multi_turn(id: usize, turns: Vec<Turn>, source: &str) -> Self {
        Self {
            id,
            external_id: None,
            instruction: String::new(),
            input: None,
            output: String::new(),
            turns,
            source: source.to_owned(),
        }
    }

    pub fn with_input(mut self, input: &str) -> Self {
        self.input = Some(input.to_owned());
        self
    }

    pub fn is_multi_turn(&self) -> bool {
        !self.turns.is_empty()
    }

    /// Checks the sample invariants, returning a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.turns.is_empty() {
            if self.output.is_empty() {
                return Err("record has neither a non-empty `output` nor `turns`".into());
            }
            return Ok(());
        }
        if !self.instruction.is_empty() || !self.output.is_empty() || self.input.is_some() {
            return Err("record mixes `turns` with single-turn fields".into());
        }
        for (k, turn) in self.turns.iter().enumerate() {
            let expected = if k % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(format!(
                    "turn {k} has role {:?}, expected {:?} (turns alternate user/assistant)",
                    turn.role, expected
                ));
            }
        }
        Ok(())
    }
}

/// An ordered collection of samples whose ids are `0..len`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<InstructionSample>,
}

impl Dataset {
    /// Builds a dataset, reassigning ids to file order.
    pub fn new(mut samples: Vec<InstructionSample>) -> Self {
        for (i, s) in samples.iter_mut().enumerate() {
            s.id = i;
        }
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&InstructionSample> {
        self.samples.get(id)
    }

    /// Appends another dataset, continuing the id range.
    pub fn extend(&mut self, other: Dataset) {
        let base = self.samples.len();
        self.samples.extend(other.samples.into_iter().enumerate().map(|(i, mut s)| {
            s.id = base + i;
            s
        }));
    }

    pub fn iter(&self) -> std::slice::Iter<'_, InstructionSample> {
        self.samples.iter()
    }
}
