//! Chunk category taxonomy: the closed set of address segment labels, their
//! general/specific split, and the gazetteers and suffix rules that drive the
//! rule-based chunker.
//!
//! Taxonomies are written in a small line-oriented text format:
//!
//! ```text
//! 0	prov	general
//! 1	road	specific
//! @alias prov
//! PB
//! @gazetteer prov
//! 浙江省
//! @suffix road
//! 路
//! ```
//!
//! Category records are tab-separated `id name class` lines and come first.
//! `@alias`, `@gazetteer` and `@suffix` blocks name a category and list one
//! entry per following line. Blank lines and lines starting with `#` are
//! ignored.

#![allow(clippy::tabs_in_doc_comments)]

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Dense category index, `0..M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u16);

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Low-diversity administrative segments versus high-diversity discriminative ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkClass {
    General,
    Specific,
}

impl ChunkClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkClass::General => "general",
            ChunkClass::Specific => "specific",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    pub class: ChunkClass,
}

/// Name of the catch-all category for material no rule recognizes.
pub const UNKNOWN_NAME: &str = "ZZ";

const BUILTIN: &str = include_str!("default_taxonomy.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkTaxonomy {
    categories: Vec<Category>,
    gazetteers: BTreeMap<CategoryId, BTreeSet<String>>,
    suffix_rules: Vec<(String, CategoryId)>,
    aliases: BTreeMap<String, CategoryId>,
    unknown: Option<CategoryId>,
}

impl ChunkTaxonomy {
    /// The built-in 29-category address taxonomy (15 general, 14 specific).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in taxonomy is valid")
    }

    /// Text of the built-in taxonomy file.
    pub fn builtin_source() -> &'static str {
        BUILTIN
    }

    /// Builds a taxonomy from explicit parts and validates it.
    pub fn new(
        categories: Vec<Category>,
        gazetteers: BTreeMap<CategoryId, BTreeSet<String>>,
        suffix_rules: Vec<(String, CategoryId)>,
        aliases: BTreeMap<String, CategoryId>,
    ) -> Result<Self, Error> {
        let unknown = categories.iter().find(|c| c.name == UNKNOWN_NAME).map(|c| c.id);
        let taxonomy = ChunkTaxonomy {
            categories,
            gazetteers,
            suffix_rules,
            aliases,
            unknown,
        };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn parse(source: &str) -> Result<Self, Error> {
        enum Block {
            Records,
            Alias(CategoryId),
            Gazetteer(CategoryId),
            Suffix(CategoryId),
        }

        let mut categories: Vec<Category> = Vec::new();
        let mut gazetteers: BTreeMap<CategoryId, BTreeSet<String>> = BTreeMap::new();
        let mut suffix_rules = Vec::new();
        let mut aliases = BTreeMap::new();
        let mut block = Block::Records;

        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            if let Some(directive) = line.strip_prefix('@') {
                let mut parts = directive.split_whitespace();
                let kind = parts.next().unwrap_or("");
                let name = parts.next().ok_or_else(|| Error::Config {
                    line: line_no,
                    message: format!("directive `@{kind}` needs a category name"),
                })?;
                if parts.next().is_some() {
                    return Err(Error::Config {
                        line: line_no,
                        message: format!("trailing text after `@{kind} {name}`"),
                    });
                }
                let id = categories
                    .iter()
                    .find(|c| c.name == name)
                    .map(|c| c.id)
                    .ok_or_else(|| Error::Config {
                        line: line_no,
                        message: format!("unknown category `{name}`"),
                    })?;
                block = match kind {
                    "alias" => Block::Alias(id),
                    "gazetteer" => Block::Gazetteer(id),
                    "suffix" => Block::Suffix(id),
                    other => {
                        return Err(Error::Config {
                            line: line_no,
                            message: format!("unknown directive `@{other}`"),
                        })
                    }
                };
                continue;
            }
            match block {
                Block::Records => {
                    let fields: Vec<&str> = line.split('\t').collect();
                    if fields.len() != 3 {
                        return Err(Error::Config {
                            line: line_no,
                            message: format!(
                                "expected `id<TAB>name<TAB>general|specific`, found {} field(s)",
                                fields.len()
                            ),
                        });
                    }
                    let id: u16 = fields[0].trim().parse().map_err(|_| Error::Config {
                        line: line_no,
                        message: format!("invalid category id `{}`", fields[0]),
                    })?;
                    let name = fields[1].trim();
                    if name.is_empty() {
                        return Err(Error::Config {
                            line: line_no,
                            message: "empty category name".to_string(),
                        });
                    }
                    let class = match fields[2].trim() {
                        "general" => ChunkClass::General,
                        "specific" => ChunkClass::Specific,
                        other => {
                            return Err(Error::Config {
                                line: line_no,
                                message: format!("class must be general or specific, got `{other}`"),
                            })
                        }
                    };
                    if categories.iter().any(|c| c.name == name) {
                        return Err(Error::Validation(format!(
                            "duplicate category name `{name}` (line {line_no})"
                        )));
                    }
                    if categories.iter().any(|c| c.id.0 == id) {
                        return Err(Error::Validation(format!(
                            "duplicate category id {id} (line {line_no})"
                        )));
                    }
                    categories.push(Category {
                        id: CategoryId(id),
                        name: name.to_string(),
                        class,
                    });
                }
                Block::Alias(id) => {
                    aliases.insert(line.trim().to_string(), id);
                }
                Block::Gazetteer(id) => {
                    gazetteers.entry(id).or_default().insert(line.trim().to_string());
                }
                Block::Suffix(id) => suffix_rules.push((line.trim().to_string(), id)),
            }
        }
        categories.sort_by_key(|c| c.id);
        Self::new(categories, gazetteers, suffix_rules, aliases)
    }

    /// Renders the taxonomy back into the text file format.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for c in &self.categories {
            out.push_str(&format!("{}\t{}\t{}\n", c.id.0, c.name, c.class.as_str()));
        }
        let mut by_target: BTreeMap<CategoryId, Vec<&str>> = BTreeMap::new();
        for (alias, id) in &self.aliases {
            by_target.entry(*id).or_default().push(alias);
        }
        for (id, names) in by_target {
            out.push_str(&format!("@alias {}\n", self.name(id)));
            for n in names {
                out.push_str(n);
                out.push('\n');
            }
        }
        for (id, entries) in &self.gazetteers {
            out.push_str(&format!("@gazetteer {}\n", self.name(*id)));
            for e in entries {
                out.push_str(e);
                out.push('\n');
            }
        }
        let mut current = None;
        for (suffix, id) in &self.suffix_rules {
            if current != Some(*id) {
                out.push_str(&format!("@suffix {}\n", self.name(*id)));
                current = Some(*id);
            }
            out.push_str(suffix);
            out.push('\n');
        }
        out
    }

    fn validate(&self) -> Result<(), Error> {
        if self.categories.is_empty() {
            return Err(Error::Validation("taxonomy has no categories".to_string()));
        }
        let mut names = BTreeSet::new();
        for (pos, c) in self.categories.iter().enumerate() {
            if c.id.index() != pos {
                return Err(Error::Validation(format!(
                    "category ids must be dense 0..{}; found id {} at position {pos}",
                    self.categories.len(),
                    c.id
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Validation(format!("duplicate category name `{}`", c.name)));
            }
        }
        let m = self.categories.len();
        let valid = |id: CategoryId| id.index() < m;
        if let Some(bad) = self.gazetteers.keys().find(|id| !valid(**id)) {
            return Err(Error::Validation(format!("gazetteer for unknown category {bad}")));
        }
        if let Some((s, bad)) = self.suffix_rules.iter().find(|(_, id)| !valid(*id)) {
            return Err(Error::Validation(format!(
                "suffix `{s}` targets unknown category {bad}"
            )));
        }
        if let Some((s, _)) = self.suffix_rules.iter().find(|(s, _)| s.is_empty()) {
            return Err(Error::Validation(format!("empty suffix rule `{s}`")));
        }
        if let Some((a, bad)) = self.aliases.iter().find(|(_, id)| !valid(**id)) {
            return Err(Error::Validation(format!("alias `{a}` targets unknown category {bad}")));
        }
        Ok(())
    }

    /// Number of categories, `M`.
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, id: CategoryId) -> &Category {
        &self.categories[id.index()]
    }

    pub fn name(&self, id: CategoryId) -> &str {
        &self.categories[id.index()].name
    }

    pub fn class(&self, id: CategoryId) -> ChunkClass {
        self.categories[id.index()].class
    }

    pub fn gazetteers(&self) -> &BTreeMap<CategoryId, BTreeSet<String>> {
        &self.gazetteers
    }

    pub fn suffix_rules(&self) -> &[(String, CategoryId)] {
        &self.suffix_rules
    }

    /// Resolves a canonical name or an alias (tagger label code, etc.).
    pub fn resolve(&self, name: &str) -> Option<CategoryId> {
        self.categories
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.id)
            .or_else(|| self.aliases.get(name).copied())
    }

    /// The unknown (`ZZ`) category when the taxonomy defines one.
    pub fn unknown(&self) -> Option<CategoryId> {
        self.unknown
    }

    pub fn count_class(&self, class: ChunkClass) -> usize {
        self.categories.iter().filter(|c| c.class == class).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_29_categories_split_15_14() {
        let t = ChunkTaxonomy::builtin();
        assert_eq!(t.len(), 29);
        assert_eq!(t.count_class(ChunkClass::General), 15);
        assert_eq!(t.count_class(ChunkClass::Specific), 14);
        assert!(t.unknown().is_some());
    }

    #[test]
    fn aliases_normalize_both_label_vocabularies() {
        let t = ChunkTaxonomy::builtin();
        assert_eq!(t.resolve("PB"), t.resolve("prov"));
        assert_eq!(t.resolve("RD"), t.resolve("road"));
        assert_eq!(t.resolve("Ent"), t.resolve("poi"));
        assert_eq!(t.resolve("unknown"), t.unknown());
        assert_eq!(t.resolve("nope"), None);
    }

    #[test]
    fn duplicate_name_is_a_validation_error() {
        let err = ChunkTaxonomy::parse("0\tcity\tgeneral\n1\tcity\tspecific\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err:?}");
    }

    #[test]
    fn minimal_two_category_file() {
        let t = ChunkTaxonomy::parse("0\tadmin\tgeneral\n1\tstreet\tspecific\n@suffix street\n路\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.suffix_rules().len(), 1);
        assert_eq!(t.unknown(), None);
    }

    #[test]
    fn malformed_line_is_reported_by_number() {
        let err = ChunkTaxonomy::parse("0\tadmin\tgeneral\n\n1 street specific\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_block_target_and_sparse_ids_are_rejected() {
        assert!(matches!(
            ChunkTaxonomy::parse("0\ta\tgeneral\n@gazetteer b\nx\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            ChunkTaxonomy::parse("0\ta\tgeneral\n2\tb\tgeneral\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn source_round_trips() {
        let t = ChunkTaxonomy::builtin();
        let again = ChunkTaxonomy::parse(&t.to_source()).unwrap();
        assert_eq!(t, again);
    }
}
