//! Prompt templates. Defaults are compiled in from `templates/`; any file of the
//! same name in a user directory replaces the default.

use std::path::Path;

use crate::dsl::{Feature, OperatorTable};
use crate::thought_tree::{example_tree, ThoughtTree, MAX_TREE_DEPTH, MAX_TREE_NODES};

use super::PromptKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub init: String,
    pub crossover: String,
    pub mutation: String,
    pub pruning: String,
    pub flat: String,
    pub grounding: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system: include_str!("../../templates/system.txt").into(),
            init: include_str!("../../templates/init.txt").into(),
            crossover: include_str!("../../templates/crossover.txt").into(),
            mutation: include_str!("../../templates/mutation.txt").into(),
            pruning: include_str!("../../templates/pruning.txt").into(),
            flat: include_str!("../../templates/flat.txt").into(),
            grounding: include_str!("../../templates/grounding.txt").into(),
        }
    }
}

impl PromptTemplates {
    /// Defaults overridden by `<dir>/<name>.txt` where present.
    pub fn load_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("template directory {} not found", dir.display()),
            ));
        }
        let mut t = PromptTemplates::default();
        let mut slots: Vec<(&str, &mut String)> = vec![("system", &mut t.system)];
        let (init, crossover, mutation, pruning, flat, grounding) =
            (&mut t.init, &mut t.crossover, &mut t.mutation, &mut t.pruning, &mut t.flat, &mut t.grounding);
        slots.extend([
            ("init", init),
            ("crossover", crossover),
            ("mutation", mutation),
            ("pruning", pruning),
            ("flat", flat),
            ("grounding", grounding),
        ]);
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::Init => &self.init,
            PromptKind::Crossover => &self.crossover,
            PromptKind::Mutation => &self.mutation,
            PromptKind::Pruning => &self.pruning,
            PromptKind::Flat => &self.flat,
            PromptKind::Grounding => &self.grounding,
        }
    }

    /// User prompt for `kind`. `trees` are the parents (or, for grounding, the thought).
    pub fn render(&self, kind: PromptKind, trees: &[&ThoughtTree], table: &OperatorTable) -> String {
        let canon = |k: usize| trees.get(k).map(|t| t.to_canonical()).unwrap_or_default();
        self.template(kind)
            .replace("{{features}}", &feature_list())
            .replace("{{grammar}}", &table.describe())
            .replace("{{tree_format}}", &tree_format())
            .replace("{{parent_a}}", &canon(0))
            .replace("{{parent_b}}", &canon(1))
            .replace("{{parent}}", &canon(0))
            .replace("{{thought}}", &canon(0))
    }
}

pub fn feature_list() -> String {
    Feature::ALL.iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
}

pub fn tree_format() -> String {
    format!(
        "\nThought tree format: one JSON object per node with a \"label\" (a short, non-empty reasoning step) \
and \"children\" (a list of child nodes, empty for leaves). No other keys and no references between nodes. \
At most {MAX_TREE_DEPTH} levels and {MAX_TREE_NODES} nodes. Example:\n```json\n{}\n```\n",
        example_tree().to_canonical()
    )
}

/// Appended to the prompt when the previous reply could not be used.
pub fn corrective_suffix(reason: &str) -> String {
    format!("\n\nYour previous reply could not be used ({reason}). Reply again and follow the required format exactly.\n")
}
