use std::collections::HashSet;

use super::table::ClassTokenTable;
use crate::error::{FclError, Result};
use crate::numerics::{stable_hash, RngStream};

pub const DEFAULT_TEMPLATE: &str = "a photo of a {}.";

/// The seven generic ImageNet templates from the CLIP repository.
pub const GENERIC_TEMPLATES: [&str; 7] = [
    "itap of a {}.",
    "a bad photo of the {}.",
    "a origami {}.",
    "a photo of the large {}.",
    "a {} in a video game.",
    "art of the {}.",
    "a photo of the small {}.",
];

/// Ordered label space with precomputed class-token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    template: String,
    tokens_per_class: usize,
    d_token: usize,
    class_tokens: Vec<Vec<f64>>,
}

impl ClassVocabulary {
    /// Builds a vocabulary from explicit per-class token embeddings.
    pub fn new(
        names: Vec<String>,
        template: impl Into<String>,
        tokens_per_class: usize,
        d_token: usize,
        class_tokens: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(FclError::Degenerate("empty vocabulary".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(FclError::Format(format!("duplicate class name `{n}`")));
            }
        }
        if class_tokens.len() != names.len() {
            return Err(FclError::shape("class embeddings", names.len(), class_tokens.len()));
        }
        for row in &class_tokens {
            if row.len() != tokens_per_class * d_token {
                return Err(FclError::shape(
                    "class embedding row",
                    tokens_per_class * d_token,
                    row.len(),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(FclError::NonFinite("class embedding"));
            }
        }
        Ok(Self {
            names,
            template: template.into(),
            tokens_per_class,
            d_token,
            class_tokens,
        })
    }

    /// Pseudo-embeddings seeded by a stable hash of the filled-in template.
    ///
    /// Fails if two classes hash to the same seed.
    pub fn hashed(names: Vec<String>, template: &str, tokens_per_class: usize, d_token: usize) -> Result<Self> {
        let mut seeds = HashSet::new();
        let mut rows = Vec::with_capacity(names.len());
        let scale = 1.0 / (d_token as f64).sqrt();
        for name in &names {
            let text = fill_template(template, name);
            let seed = stable_hash(text.as_bytes());
            if !seeds.insert(seed) {
                return Err(FclError::Format(format!("class-name hash collision at `{name}`")));
            }
            let mut rng = RngStream::new(seed, 0);
            rows.push(
                (0..tokens_per_class * d_token)
                    .map(|_| scale * rng.gaussian())
                    .collect(),
            );
        }
        Self::new(names, template, tokens_per_class, d_token, rows)
    }

    pub fn from_table(names: Vec<String>, template: &str, table: &ClassTokenTable) -> Result<Self> {
        if table.num_classes() != names.len() {
            return Err(FclError::shape(
                "class-token table classes",
                names.len(),
                table.num_classes(),
            ));
        }
        let rows = (0..names.len()).map(|c| table.class_row(c)).collect();
        Self::new(names, template, table.tokens_per_class(), table.d_token(), rows)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.names.get(class).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn tokens_per_class(&self) -> usize {
        self.tokens_per_class
    }

    pub fn d_token(&self) -> usize {
        self.d_token
    }

    pub fn class_tokens(&self, class: usize) -> Result<&[f64]> {
        self.class_tokens
            .get(class)
            .map(Vec::as_slice)
            .ok_or(FclError::UnknownClass(class))
    }
}

pub(crate) fn fill_template(template: &str, name: &str) -> String {
    if template.contains("{}") {
        template.replace("{}", name)
    } else {
        format!("{template} {name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hashed_is_deterministic_and_template_sensitive() {
        let a = ClassVocabulary::hashed(names(&["cat", "dog"]), DEFAULT_TEMPLATE, 1, 8).unwrap();
        let b = ClassVocabulary::hashed(names(&["cat", "dog"]), DEFAULT_TEMPLATE, 1, 8).unwrap();
        assert_eq!(a, b);
        let c = ClassVocabulary::hashed(names(&["cat", "dog"]), GENERIC_TEMPLATES[0], 1, 8).unwrap();
        assert_ne!(a.class_tokens(0).unwrap(), c.class_tokens(0).unwrap());
        assert_eq!(a.index_of("dog"), Some(1));
        assert!(a.class_tokens(2).is_err());
    }

    #[test]
    fn rejects_duplicates() {
        assert!(ClassVocabulary::hashed(names(&["cat", "cat"]), DEFAULT_TEMPLATE, 1, 4).is_err());
        assert!(ClassVocabulary::hashed(vec![], DEFAULT_TEMPLATE, 1, 4).is_err());
    }

    #[test]
    fn thousand_classes_without_collision() {
        let list: Vec<String> = (0..1000).map(|i| format!("class_{i}")).collect();
        let v = ClassVocabulary::hashed(list, DEFAULT_TEMPLATE, 1, 4).unwrap();
        assert_eq!(v.len(), 1000);
    }
}
