//! Taxonomy files and JSONL corpora.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use georank_core::corpus::RankingInstance;
use georank_core::{coarse_chunk, coarse_taxonomy, CategoryId, ChunkTaxonomy, ChunkedText, Chunker, Scheme};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Taxonomy for `scheme`: the file at `path` or the built-in one for `geo`,
/// the fixed two-label taxonomy for `coarse`.
pub fn load_taxonomy(path: Option<&Path>, scheme: Scheme) -> Result<ChunkTaxonomy> {
    match (scheme, path) {
        (Scheme::Coarse, Some(_)) => Err(Error::Usage(
            "--taxonomy cannot be combined with the coarse scheme".into(),
        )),
        (Scheme::Coarse, None) => Ok(coarse_taxonomy()),
        (Scheme::Geo, None) => Ok(ChunkTaxonomy::builtin()),
        (Scheme::Geo, Some(p)) => ChunkTaxonomy::parse(&read_to_string(p)?).map_err(|e| match e {
            georank_core::Error::Config { line, message } => Error::Parse {
                path: p.to_path_buf(),
                line,
                message,
            },
            other => other.into(),
        }),
    }
}

/// Segments raw text under one scheme.
#[derive(Debug, Clone)]
pub struct Segmenter {
    taxonomy: ChunkTaxonomy,
    scheme: Scheme,
    chunker: Option<Chunker>,
}

impl Segmenter {
    pub fn new(taxonomy: ChunkTaxonomy, scheme: Scheme) -> Result<Self> {
        let chunker = match scheme {
            Scheme::Geo => Some(Chunker::new(&taxonomy)?),
            Scheme::Coarse => None,
        };
        Ok(Segmenter {
            taxonomy,
            scheme,
            chunker,
        })
    }

    pub fn taxonomy(&self) -> &ChunkTaxonomy {
        &self.taxonomy
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn segment(&self, text: &str) -> ChunkedText {
        match &self.chunker {
            Some(c) => c.chunk(text),
            None => coarse_chunk(text),
        }
    }
}

/// Category reference in a span: a name (or alias) or a numeric id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategoryRef {
    Id(u16),
    Name(String),
}

pub type SpanRecord = (usize, usize, CategoryRef);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunks: Option<Vec<SpanRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_chunks: Option<Vec<SpanRecord>>,
    pub candidates: Vec<CandidateRecord>,
    pub gold_index: usize,
}

fn spans_of(text: &ChunkedText, taxonomy: &ChunkTaxonomy) -> Vec<SpanRecord> {
    text.chunks
        .iter()
        .map(|c| (c.start, c.end, CategoryRef::Name(taxonomy.name(c.category).to_string())))
        .collect()
}

pub fn to_record(inst: &RankingInstance, taxonomy: &ChunkTaxonomy) -> InstanceRecord {
    InstanceRecord {
        query: inst.query.source.clone(),
        query_chunks: Some(spans_of(&inst.query, taxonomy)),
        candidates: inst
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| CandidateRecord {
                text: c.source.clone(),
                chunks: Some(spans_of(c, taxonomy)),
                relevance: inst.relevance.as_ref().map(|r| r[i]),
            })
            .collect(),
        gold_index: inst.gold_index,
    }
}

fn resolve_text(text: &str, spans: Option<&[SpanRecord]>, seg: &Segmenter) -> std::result::Result<ChunkedText, String> {
    let taxonomy = seg.taxonomy();
    match spans {
        Some(spans) if seg.scheme() == Scheme::Geo => {
            let resolved = spans
                .iter()
                .map(|(s, e, cat)| {
                    let id = match cat {
                        CategoryRef::Id(i) if (*i as usize) < taxonomy.len() => CategoryId(*i),
                        CategoryRef::Id(i) => return Err(format!("category id {i} out of range")),
                        CategoryRef::Name(n) => taxonomy.resolve(n).ok_or_else(|| format!("unknown category `{n}`"))?,
                    };
                    Ok((*s, *e, id))
                })
                .collect::<std::result::Result<Vec<_>, String>>()?;
            let ct = ChunkedText::from_spans(text, &resolved, taxonomy.len()).map_err(|e| e.to_string())?;
            ct.validate(taxonomy.len()).map_err(|e| e.to_string())?;
            Ok(ct)
        }
        _ => Ok(seg.segment(text)),
    }
}

/// Converts a record, chunking any text that lacks annotations. Under the
/// coarse scheme annotations are ignored and every text is re-segmented.
pub fn from_record(rec: &InstanceRecord, seg: &Segmenter) -> std::result::Result<RankingInstance, String> {
    let query = resolve_text(&rec.query, rec.query_chunks.as_deref(), seg)?;
    let candidates = rec
        .candidates
        .iter()
        .map(|c| resolve_text(&c.text, c.chunks.as_deref(), seg))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let graded = rec.candidates.iter().filter(|c| c.relevance.is_some()).count();
    let relevance = match graded {
        0 => None,
        n if n == rec.candidates.len() => Some(rec.candidates.iter().map(|c| c.relevance.unwrap_or(0)).collect()),
        _ => return Err("relevance must be given for every candidate or none".into()),
    };
    let inst = RankingInstance {
        query,
        candidates,
        gold_index: rec.gold_index,
        relevance,
    };
    inst.validate(seg.taxonomy().len()).map_err(|e| e.to_string())?;
    Ok(inst)
}

pub fn read_corpus(path: &Path, seg: &Segmenter) -> Result<Vec<RankingInstance>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(from_record(&rec, seg).map_err(parse_err)?);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "corpus has no records".into(),
        });
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, instances: &[RankingInstance], taxonomy: &ChunkTaxonomy) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        let line = serde_json::to_string(&to_record(inst, taxonomy)).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
