use serde::{Deserialize, Serialize};

use super::ExpandError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    ZeroShot,
    FewShot,
}

/// A worked example shown to the model before the target passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub passage: String,
    pub queries: Vec<String>,
}

/// A query-generation prompt.
///
/// `layout` may use the placeholders `{instruction}`, `{exemplars}`,
/// `{passage}` and `{n}`; `instruction` may use `{n}`; `exemplar_layout`
/// may use `{index}`, `{passage}` and `{queries}`. Substitution is a single
/// left-to-right pass over the layout, so placeholder-like text inside a
/// passage or exemplar is copied verbatim and never expanded. `{{` and `}}`
/// produce literal braces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub instruction: String,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
    pub layout: String,
    #[serde(default = "default_exemplar_layout")]
    pub exemplar_layout: String,
}

fn default_exemplar_layout() -> String {
    "Positive Example {index} -\nInput: {passage}\nOutput:\n{queries}\n\n".into()
}

impl PromptTemplate {
    /// Instruction-following zero-shot prompt (Alpaca layout). The wording
    /// is a reasonable default, not a verbatim reproduction of any
    /// published prompt.
    pub fn zero_shot() -> Self {
        Self {
            kind: TemplateKind::ZeroShot,
            instruction: "Generate {n} search queries that the following passage answers. \
                          Write one query per line."
                .into(),
            exemplars: Vec::new(),
            layout: "Below is an instruction that describes a task, paired with an input that provides \
                     further context. Write a response that appropriately completes the request.\n\n\
                     ### Instruction:\n{instruction}\n\n### Input:\n{passage}\n\n### Response:\n"
                .into(),
            exemplar_layout: default_exemplar_layout(),
        }
    }

    /// Definition-plus-examples prompt (tk-Instruct layout). Like
    /// [`zero_shot`](Self::zero_shot), the wording is a default.
    pub fn few_shot() -> Self {
        Self {
            kind: TemplateKind::FewShot,
            instruction: "Given a passage, write {n} search queries that the passage answers, one per line.".into(),
            exemplars: vec![
                Exemplar {
                    passage: "The Manhattan Project was a research and development undertaking during \
                              World War II that produced the first nuclear weapons."
                        .into(),
                    queries: vec![
                        "what was the manhattan project".into(),
                        "who produced the first nuclear weapons".into(),
                        "manhattan project world war ii".into(),
                    ],
                },
                Exemplar {
                    passage: "Photosynthesis is the process by which green plants use sunlight to \
                              synthesize foods from carbon dioxide and water."
                        .into(),
                    queries: vec![
                        "what is photosynthesis".into(),
                        "how do plants make food from sunlight".into(),
                        "photosynthesis carbon dioxide water".into(),
                    ],
                },
            ],
            layout: "Definition: {instruction}\n\n{exemplars}Now complete the following example -\n\
                     Input: {passage}\nOutput:\n"
                .into(),
            exemplar_layout: default_exemplar_layout(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExpandError> {
        let t: Self = toml::from_str(text).map_err(|e| ExpandError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template serializes")
    }

    pub fn validate(&self) -> Result<(), ExpandError> {
        if self.kind == TemplateKind::FewShot && self.exemplars.is_empty() {
            return Err(ExpandError::Template("a few-shot template needs at least one exemplar".into()));
        }
        let count = placeholders(&self.layout)?.iter().filter(|p| p.as_str() == "passage").count();
        if count != 1 {
            return Err(ExpandError::Template(format!(
                "layout must contain {{passage}} exactly once, found {count}"
            )));
        }
        for p in placeholders(&self.layout)? {
            if !["instruction", "exemplars", "passage", "n"].contains(&p.as_str()) {
                return Err(ExpandError::Template(format!("unknown layout placeholder {{{p}}}")));
            }
        }
        for p in placeholders(&self.instruction)? {
            if p != "n" {
                return Err(ExpandError::Template(format!("unknown instruction placeholder {{{p}}}")));
            }
        }
        for p in placeholders(&self.exemplar_layout)? {
            if !["index", "passage", "queries"].contains(&p.as_str()) {
                return Err(ExpandError::Template(format!("unknown exemplar placeholder {{{p}}}")));
            }
        }
        Ok(())
    }

    /// Renders the prompt for one passage, asking for `n` queries.
    pub fn render(&self, passage: &str, n: usize) -> Result<String, ExpandError> {
        if n == 0 {
            return Err(ExpandError::Template("must request at least one query".into()));
        }
        self.validate()?;
        let n_text = n.to_string();
        let instruction = substitute(&self.instruction, |k| (k == "n").then_some(n_text.as_str()))?;
        let mut exemplars = String::new();
        for (i, ex) in self.exemplars.iter().enumerate() {
            let index = (i + 1).to_string();
            let queries = ex.queries.join("\n");
            exemplars.push_str(&substitute(&self.exemplar_layout, |k| match k {
                "index" => Some(index.as_str()),
                "passage" => Some(ex.passage.as_str()),
                "queries" => Some(queries.as_str()),
                _ => None,
            })?);
        }
        substitute(&self.layout, |k| match k {
            "instruction" => Some(instruction.as_str()),
            "exemplars" => Some(exemplars.as_str()),
            "passage" => Some(passage),
            "n" => Some(n_text.as_str()),
            _ => None,
        })
    }
}

/// Names of `{placeholder}`s in `text`.
fn placeholders(text: &str) -> Result<Vec<String>, ExpandError> {
    let mut names = Vec::new();
    substitute(text, |k| {
        names.push(k.to_string());
        Some("")
    })?;
    Ok(names)
}

/// One pass over `text`, replacing `{key}` with `value(key)`. Replacement
/// text is never rescanned.
fn substitute<'a>(text: &str, mut value: impl FnMut(&str) -> Option<&'a str>) -> Result<String, ExpandError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(ExpandError::Template("unmatched `}` in template".into()));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| ExpandError::Template("unterminated `{` in template".into()))?;
            let key = &tail[1..end];
            let v = value(key).ok_or_else(|| ExpandError::Template(format!("unknown placeholder {{{key}}}")))?;
            out.push_str(v);
            rest = &tail[end + 1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: &str = "Zq9 the passage under test";

    #[test]
    fn zero_shot_contains_passage_once() {
        let out = PromptTemplate::zero_shot().render(P, 3).unwrap();
        assert_eq!(out.matches(P).count(), 1);
        assert!(out.contains("Generate 3 search queries"));
    }

    #[test]
    fn few_shot_exemplars_precede_target() {
        let t = PromptTemplate::few_shot();
        assert_eq!(t.exemplars.len(), 2);
        let out = t.render(P, 2).unwrap();
        let target = out.find(P).unwrap();
        for ex in &t.exemplars {
            assert!(out.find(&ex.passage).unwrap() < target);
        }
        assert!(out.starts_with("Definition: Given a passage, write 2 search queries"));
        assert!(out.contains("Positive Example 1 -"));
        assert!(out.contains("Now complete the following example -"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = PromptTemplate::few_shot();
        assert_eq!(t.render(P, 3).unwrap().as_bytes(), t.render(P, 3).unwrap().as_bytes());
    }

    #[test]
    fn placeholders_in_passages_are_not_expanded() {
        let nasty = "see {passage} and {instruction} and {{n}} and {";
        let out = PromptTemplate::zero_shot().render(nasty, 3).unwrap();
        assert_eq!(out.matches(nasty).count(), 1);
        assert_eq!(out.matches("Generate 3").count(), 1);
    }

    #[test]
    fn template_validation() {
        let mut t = PromptTemplate::few_shot();
        t.exemplars.clear();
        assert!(t.validate().is_err());
        let mut t = PromptTemplate::zero_shot();
        t.layout = "{passage} {passage}".into();
        assert!(t.validate().is_err());
        t.layout = "{nope} {passage}".into();
        assert!(t.validate().is_err());
        assert!(PromptTemplate::zero_shot().render(P, 0).is_err());
        for t in [PromptTemplate::zero_shot(), PromptTemplate::few_shot()] {
            assert_eq!(PromptTemplate::from_toml(&t.to_toml()).unwrap(), t);
        }
    }

    proptest! {
        #[test]
        fn arbitrary_passages_render_verbatim(passage in "\\PC{1,80}") {
            for t in [PromptTemplate::zero_shot(), PromptTemplate::few_shot()] {
                let out = t.render(&passage, 3).unwrap();
                prop_assert!(out.contains(&passage));
                prop_assert_eq!(out.clone(), t.render(&passage, 3).unwrap());
            }
        }
    }
}
