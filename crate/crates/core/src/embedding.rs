//! Labeled embedding sets and their on-disk formats.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic  [u8; 4]        "EMBV" (hard labels) or "EMBS" (soft labels)
//! version u32            1
//! n       u32            record count
//! d       u32            vector dimensionality
//! k       u32            class count
//! k x (u32 byte length, UTF-8 class name)
//! n x record
//!     EMBV: u32 label_id, d x f32
//!     EMBS: k x f32 label weights, d x f32
//! ```
//!
//! The JSONL variant starts with a header line `{"dim":d,"classes":[...]}`
//! followed by one `{"label":name,"vec":[...]}` object per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const HARD_MAGIC: [u8; 4] = *b"EMBV";
pub const SOFT_MAGIC: [u8; 4] = *b"EMBS";
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on the sum of a soft label.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(Format::Binary),
            "jsonl" | "json" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// Ordered, duplicate-free list of at least two class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::Vocab(format!(
                "at least 2 classes required, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Vocab("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Vocab(format!("duplicate class name `{name}`")));
            }
        }
        Ok(Self { names })
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

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn check_finite(vector: &[f32], record: usize) -> Result<()> {
    match vector.iter().position(|v| !v.is_finite()) {
        Some(j) => Err(Error::Data(format!(
            "record {record}: component {j} is not finite"
        ))),
        None => Ok(()),
    }
}

/// `n` hard-labeled `d`-dimensional vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet {
    dim: usize,
    vocab: ClassVocabulary,
    labels: Vec<usize>,
    data: Vec<f32>,
}

impl LabeledEmbeddingSet {
    pub fn empty(dim: usize, vocab: ClassVocabulary) -> Self {
        Self {
            dim,
            vocab,
            labels: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds a set from parallel label and row-major vector buffers.
    pub fn from_parts(
        dim: usize,
        vocab: ClassVocabulary,
        labels: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != labels.len() * dim {
            return Err(Error::Data(format!(
                "{} components for {} records of dimension {dim}",
                data.len(),
                labels.len()
            )));
        }
        let k = vocab.len();
        for (i, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(Error::Vocab(format!(
                    "record {i}: label id {label} outside vocabulary of {k} classes"
                )));
            }
        }
        if dim > 0 {
            for (i, row) in data.chunks_exact(dim).enumerate() {
                check_finite(row, i)?;
            }
        }
        Ok(Self {
            dim,
            vocab,
            labels,
            data,
        })
    }

    pub fn push(&mut self, label: usize, vector: &[f32]) -> Result<()> {
        check_dim(self.dim, vector.len())?;
        if label >= self.vocab.len() {
            return Err(Error::Vocab(format!("label id {label} outside vocabulary")));
        }
        check_finite(vector, self.labels.len())?;
        self.labels.push(label);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f32])> + '_ {
        (0..self.len()).map(move |i| (self.labels[i], self.vector(i)))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Record indices belonging to `class`, in record order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// One-hot encodes every label.
    pub fn to_soft(&self) -> SoftLabeledSet {
        let k = self.num_classes();
        let mut soft = vec![0f32; self.len() * k];
        for (i, &l) in self.labels.iter().enumerate() {
            soft[i * k + l] = 1.0;
        }
        SoftLabeledSet {
            dim: self.dim,
            vocab: self.vocab.clone(),
            soft_labels: soft,
            data: self.data.clone(),
        }
    }
}

/// Vectors paired with probability distributions over the class vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabeledSet {
    dim: usize,
    vocab: ClassVocabulary,
    soft_labels: Vec<f32>,
    data: Vec<f32>,
}

fn check_simplex(label: &[f32], record: usize) -> Result<()> {
    let mut sum = 0f64;
    for &w in label {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Data(format!(
                "record {record}: soft label weight {w} outside [0, 1]"
            )));
        }
        sum += w as f64;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Data(format!(
            "record {record}: soft label sums to {sum}"
        )));
    }
    Ok(())
}

impl SoftLabeledSet {
    pub fn empty(dim: usize, vocab: ClassVocabulary) -> Self {
        Self {
            dim,
            vocab,
            soft_labels: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn from_parts(
        dim: usize,
        vocab: ClassVocabulary,
        soft_labels: Vec<f32>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let k = vocab.len();
        let n = soft_labels.len() / k;
        if soft_labels.len() != n * k || data.len() != n * dim {
            return Err(Error::Data(format!(
                "inconsistent buffers: {} label weights, {} components (k={k}, d={dim})",
                soft_labels.len(),
                data.len()
            )));
        }
        for i in 0..n {
            check_simplex(&soft_labels[i * k..(i + 1) * k], i)?;
            check_finite(&data[i * dim..(i + 1) * dim], i)?;
        }
        Ok(Self {
            dim,
            vocab,
            soft_labels,
            data,
        })
    }

    pub fn push(&mut self, soft_label: &[f32], vector: &[f32]) -> Result<()> {
        check_dim(self.vocab.len(), soft_label.len())?;
        check_dim(self.dim, vector.len())?;
        check_simplex(soft_label, self.len())?;
        check_finite(vector, self.len())?;
        self.soft_labels.extend_from_slice(soft_label);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    /// Appends all records of `other`, which must share dimension and vocabulary.
    pub fn extend(&mut self, other: &SoftLabeledSet) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        if self.vocab != other.vocab {
            return Err(Error::Vocab("vocabularies differ".into()));
        }
        self.soft_labels.extend_from_slice(&other.soft_labels);
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(self.soft_labels.len() / self.vocab.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn soft_label(&self, i: usize) -> &[f32] {
        let k = self.vocab.len();
        &self.soft_labels[i * k..(i + 1) * k]
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Class with the largest weight per record; ties go to the lowest index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| argmax(self.soft_label(i)))
            .collect()
    }

    /// Hard-labels every record by [`argmax_labels`](Self::argmax_labels).
    pub fn to_hard(&self) -> LabeledEmbeddingSet {
        LabeledEmbeddingSet {
            dim: self.dim,
            vocab: self.vocab.clone(),
            labels: self.argmax_labels(),
            data: self.data.clone(),
        }
    }
}

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// binary IO

fn put_u32(out: &mut impl Write, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(out: &mut impl Write, values: &[f32]) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

fn write_header(
    out: &mut impl Write,
    magic: [u8; 4],
    n: usize,
    dim: usize,
    vocab: &ClassVocabulary,
) -> Result<()> {
    out.write_all(&magic)?;
    put_u32(out, FORMAT_VERSION)?;
    put_u32(out, to_u32(n, "record count")?)?;
    put_u32(out, to_u32(dim, "dimension")?)?;
    put_u32(out, to_u32(vocab.len(), "class count")?)?;
    for name in vocab.names() {
        put_u32(out, to_u32(name.len(), "name length")?)?;
        out.write_all(name.as_bytes())?;
    }
    Ok(())
}

/// Byte cursor over an in-memory file that reports truncation as a format error.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!("truncated file while reading {what} at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize, out: &mut Vec<f32>, what: &str) -> Result<()> {
        let b = self.take(count * 4, what)?;
        out.extend(
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        Ok(())
    }
}

struct Header {
    n: usize,
    dim: usize,
    vocab: ClassVocabulary,
}

fn read_header(cur: &mut Cursor<'_>, magic: [u8; 4]) -> Result<Header> {
    let got = cur.take(4, "magic")?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = cur.u32("record count")? as usize;
    let dim = cur.u32("dimension")? as usize;
    let k = cur.u32("class count")? as usize;
    let mut names = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let len = cur.u32("name length")? as usize;
        let raw = cur.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|e| Error::Format(format!("class name is not UTF-8: {e}")))?;
        names.push(name.to_owned());
    }
    let vocab = ClassVocabulary::new(names)?;
    Ok(Header { n, dim, vocab })
}

fn expect_payload(cur: &Cursor<'_>, n: usize, record_bytes: usize) -> Result<()> {
    let remaining = cur.bytes.len() - cur.pos;
    let needed = n
        .checked_mul(record_bytes)
        .ok_or_else(|| Error::Format("record count overflows".into()))?;
    if remaining != needed {
        return Err(Error::Format(format!(
            "payload is {remaining} bytes, header declares {n} records ({needed} bytes)"
        )));
    }
    Ok(())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Peeks at the magic bytes of a file.
pub fn sniff_magic(path: &Path) -> Result<[u8; 4]> {
    let mut magic = [0u8; 4];
    File::open(path)?
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file shorter than magic".into()))?;
    Ok(magic)
}

fn decode_hard(bytes: &[u8]) -> Result<LabeledEmbeddingSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    let Header { n, dim, vocab } = read_header(&mut cur, HARD_MAGIC)?;
    expect_payload(&cur, n, 4 + 4 * dim)?;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        labels.push(cur.u32("label id")? as usize);
        cur.f32s(dim, &mut data, "vector")?;
    }
    LabeledEmbeddingSet::from_parts(dim, vocab, labels, data)
}

fn decode_soft(bytes: &[u8]) -> Result<SoftLabeledSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    let Header { n, dim, vocab } = read_header(&mut cur, SOFT_MAGIC)?;
    let k = vocab.len();
    expect_payload(&cur, n, 4 * (k + dim))?;
    let mut soft = Vec::with_capacity(n * k);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        cur.f32s(k, &mut soft, "soft label")?;
        cur.f32s(dim, &mut data, "vector")?;
    }
    SoftLabeledSet::from_parts(dim, vocab, soft, data)
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    dim: usize,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    label: String,
    vec: Vec<f64>,
}

fn read_jsonl(path: &Path) -> Result<LabeledEmbeddingSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: JsonHeader = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| Error::Format(format!("bad header line: {e}")))?;
            }
            None => return Err(Error::Format("missing header line".into())),
        }
    };
    let vocab = ClassVocabulary::new(header.classes)?;
    let mut set = LabeledEmbeddingSet::empty(header.dim, vocab);
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let label = set.vocab().id_of(&rec.label).ok_or_else(|| {
            Error::Vocab(format!("line {}: unknown label `{}`", lineno + 1, rec.label))
        })?;
        if rec.vec.len() != set.dim() {
            return Err(Error::Format(format!(
                "line {}: vector has {} components, header declares {}",
                lineno + 1,
                rec.vec.len(),
                set.dim()
            )));
        }
        let vector: Vec<f32> = rec.vec.iter().map(|&v| v as f32).collect();
        set.push(label, &vector)?;
    }
    Ok(set)
}

fn write_jsonl(set: &LabeledEmbeddingSet, out: &mut impl Write) -> Result<()> {
    let header = serde_json::json!({ "dim": set.dim(), "classes": set.vocab().names() });
    writeln!(out, "{header}")?;
    for (label, vector) in set.iter() {
        let line = serde_json::json!({ "label": set.vocab().name(label), "vec": vector });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>, format: Format) -> Result<LabeledEmbeddingSet> {
    let path = path.as_ref();
    match format {
        Format::Binary => decode_hard(&read_all(path)?),
        Format::Jsonl => read_jsonl(path),
    }
}

pub fn write_embeddings(
    set: &LabeledEmbeddingSet,
    path: impl AsRef<Path>,
    format: Format,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Binary => {
            write_header(&mut out, HARD_MAGIC, set.len(), set.dim(), set.vocab())?;
            for (label, vector) in set.iter() {
                put_u32(&mut out, label as u32)?;
                put_f32s(&mut out, vector)?;
            }
        }
        Format::Jsonl => write_jsonl(set, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

pub fn read_soft(path: impl AsRef<Path>) -> Result<SoftLabeledSet> {
    decode_soft(&read_all(path.as_ref())?)
}

pub fn write_soft(set: &SoftLabeledSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, SOFT_MAGIC, set.len(), set.dim(), set.vocab())?;
    for i in 0..set.len() {
        put_f32s(&mut out, set.soft_label(i))?;
        put_f32s(&mut out, set.vector(i))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads either binary variant, one-hot encoding hard labels.
pub fn read_any_binary(path: impl AsRef<Path>) -> Result<SoftLabeledSet> {
    let path = path.as_ref();
    match sniff_magic(path)? {
        HARD_MAGIC => Ok(read_embeddings(path, Format::Binary)?.to_soft()),
        SOFT_MAGIC => read_soft(path),
        other => Err(Error::Format(format!(
            "unrecognized magic {:?}",
            String::from_utf8_lossy(&other)
        ))),
    }
}

/// Size in bytes of the fixed header plus class-name table.
pub fn header_len(vocab: &ClassVocabulary) -> usize {
    20 + vocab.names().iter().map(|n| 4 + n.len()).sum::<usize>()
}
