use super::{CorpusError, InstructionSample, Role};

/// Section markers used when rendering a sample into one training text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderTemplate {
    pub instruction: String,
    pub input: String,
    pub response: String,
    pub separator: String,
}

impl Default for RenderTemplate {
    fn default() -> Self {
        Self {
            instruction: "### Instruction:\n".into(),
            input: "### Input:\n".into(),
            response: "### Response:\n".into(),
            separator: "\n\n".into(),
        }
    }
}

impl RenderTemplate {
    /// Parses `key=value` lines (`instruction`, `input`, `response`,
    /// `separator`). `\n` and `\t` escapes are expanded; `#` starts a comment.
    /// Keys not given keep their default value.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut template = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CorpusError::Template {
                line: idx + 1,
                message: "expected key=value".into(),
            })?;
            let value = unescape(value.trim());
            match key.trim() {
                "instruction" => template.instruction = value,
                "input" => template.input = value,
                "response" => template.response = value,
                "separator" => template.separator = value,
                other => {
                    return Err(CorpusError::Template {
                        line: idx + 1,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        Ok(template)
    }
}

fn unescape(s: &str) -> String {
    s.replace("\\n", "\n").replace("\\t", "\t")
}

/// A piece of rendered text. `target` pieces are what the model must produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment<'a> {
    pub text: &'a str,
    pub target: bool,
    /// Sample content (as opposed to template markup).
    pub content: bool,
}

impl<'a> Segment<'a> {
    fn markup(text: &'a str) -> Self {
        Self {
            text,
            target: false,
            content: false,
        }
    }

    fn context(text: &'a str) -> Self {
        Self {
            text,
            target: false,
            content: true,
        }
    }

    fn target(text: &'a str) -> Self {
        Self {
            text,
            target: true,
            content: true,
        }
    }
}

/// Splits the rendered form of `sample` into markup, context and target pieces.
pub fn render_segments<'a>(
    sample: &'a InstructionSample,
    template: &'a RenderTemplate,
) -> Vec<Segment<'a>> {
    let mut out = Vec::new();
    if sample.turns.is_empty() {
        out.push(Segment::markup(&template.instruction));
        out.push(Segment::context(&sample.instruction));
        out.push(Segment::markup(&template.separator));
        if let Some(input) = sample.input.as_deref().filter(|s| !s.is_empty()) {
            out.push(Segment::markup(&template.input));
            out.push(Segment::context(input));
            out.push(Segment::markup(&template.separator));
        }
        out.push(Segment::markup(&template.response));
        out.push(Segment::target(&sample.output));
        return out;
    }
    for (k, turn) in sample.turns.iter().enumerate() {
        if k > 0 {
            out.push(Segment::markup(&template.separator));
        }
        match turn.role {
            Role::User => {
                out.push(Segment::markup(&template.instruction));
                out.push(Segment::context(&turn.text));
            }
            Role::Assistant => {
                out.push(Segment::markup(&template.response));
                out.push(Segment::target(&turn.text));
            }
        }
    }
    out
}

pub fn render_with(sample: &InstructionSample, template: &RenderTemplate) -> String {
    render_segments(sample, template)
        .iter()
        .map(|s| s.text)
        .collect()
}

/// Renders a sample with the default `### Instruction / ### Input / ### Response` markers.
pub fn render_text(sample: &InstructionSample) -> String {
    render_with(sample, &RenderTemplate::default())
}
