//! Schema, records, context bit vectors and the implicit context graph.
//!
//! A context is a conjunction over attributes of disjunctions over domain
//! values. It is stored as a fixed-length bit vector of `t` bits grouped by
//! attribute in schema order. Position `i` of the printed vector (leftmost is
//! position 0) is bit `t - 1 - i` of the backing integer, so the integer value
//! of a context is its ascending enumeration index.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{PcorError, Result};

/// Widest context the bit-vector representation supports.
pub const MAX_CONTEXT_BITS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub domain: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    attributes: Vec<Attribute>,
    metric_name: String,
    offsets: Vec<usize>,
    t: usize,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>, metric_name: impl Into<String>) -> Result<Self> {
        let metric_name = metric_name.into();
        if attributes.is_empty() {
            return Err(PcorError::Schema(
                "at least one categorical attribute is required".into(),
            ));
        }
        if metric_name.trim().is_empty() {
            return Err(PcorError::Schema("metric name is empty".into()));
        }
        let mut seen_names = std::collections::HashSet::new();
        let mut offsets = Vec::with_capacity(attributes.len());
        let mut t = 0;
        for attr in &attributes {
            if attr.name.trim().is_empty() {
                return Err(PcorError::Schema("attribute with empty name".into()));
            }
            if !seen_names.insert(attr.name.as_str()) || attr.name == metric_name {
                return Err(PcorError::Schema(format!("duplicate column name `{}`", attr.name)));
            }
            if attr.domain.is_empty() {
                return Err(PcorError::Schema(format!(
                    "attribute `{}` has an empty domain",
                    attr.name
                )));
            }
            let mut seen_values = std::collections::HashSet::new();
            for v in &attr.domain {
                if !seen_values.insert(v.as_str()) {
                    return Err(PcorError::Schema(format!(
                        "attribute `{}` lists value `{v}` twice",
                        attr.name
                    )));
                }
            }
            offsets.push(t);
            t += attr.domain.len();
        }
        if t > MAX_CONTEXT_BITS {
            return Err(PcorError::Schema(format!(
                "total domain size t = {t} exceeds the supported {MAX_CONTEXT_BITS} bits"
            )));
        }
        Ok(Schema {
            attributes,
            metric_name,
            offsets,
            t,
        })
    }

    /// Parses the line-oriented schema format: `attribute: v1, v2, ...` per
    /// categorical attribute and a final `metric: <name>` line. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut attributes = Vec::new();
        let mut metric = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if metric.is_some() {
                return Err(PcorError::Schema(format!(
                    "line {}: `metric:` must be the final line",
                    lineno + 1
                )));
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| PcorError::Schema(format!("line {}: expected `name: values`", lineno + 1)))?;
            let key = key.trim();
            if key == "metric" {
                metric = Some(rest.trim().to_string());
                continue;
            }
            let domain: Vec<String> = rest.split(',').map(|v| v.trim().to_string()).collect();
            if domain.iter().any(|v| v.is_empty()) {
                return Err(PcorError::Schema(format!(
                    "line {}: attribute `{key}` has an empty value",
                    lineno + 1
                )));
            }
            attributes.push(Attribute {
                name: key.to_string(),
                domain,
            });
        }
        let metric = metric.ok_or_else(|| PcorError::Schema("missing `metric:` line".into()))?;
        Schema::new(attributes, metric)
    }

    /// Canonical text form; `Schema::parse(s.to_text()) == s`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for attr in &self.attributes {
            out.push_str(&attr.name);
            out.push_str(": ");
            out.push_str(&attr.domain.join(", "));
            out.push('\n');
        }
        out.push_str("metric: ");
        out.push_str(&self.metric_name);
        out.push('\n');
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    /// Total context length, the sum of all domain sizes.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of categorical attributes.
    pub fn m(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn value_index(&self, attribute: usize, value: &str) -> Option<usize> {
        self.attributes[attribute].domain.iter().position(|v| v == value)
    }

    /// Vector position of the `value`-th domain value of `attribute`.
    pub fn position(&self, attribute: usize, value: usize) -> usize {
        self.offsets[attribute] + value
    }

    /// Positions `[start, end)` belonging to `attribute`.
    pub fn group_range(&self, attribute: usize) -> std::ops::Range<usize> {
        let start = self.offsets[attribute];
        start..start + self.attributes[attribute].domain.len()
    }

    /// Context with exactly the bits of one attribute group set.
    pub fn group_mask(&self, attribute: usize) -> Context {
        let mut ctx = Context::zeros(self.t);
        for pos in self.group_range(attribute) {
            ctx.set(pos, true);
        }
        ctx
    }

    /// Context whose set bits are exactly the record's values.
    pub fn record_context(&self, record: &Record) -> Context {
        let mut ctx = Context::zeros(self.t);
        for (attr, &value) in record.values.iter().enumerate() {
            ctx.set(self.position(attr, value as usize), true);
        }
        ctx
    }

    /// Human-readable predicate form, e.g. `Jobtitle in {CEO, Lawyer} AND City in {Toronto}`.
    pub fn describe(&self, context: &Context) -> String {
        self.attributes
            .iter()
            .enumerate()
            .map(|(i, attr)| {
                let chosen: Vec<&str> = attr
                    .domain
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| context.get(self.position(i, *j)))
                    .map(|(_, v)| v.as_str())
                    .collect();
                format!("{} in {{{}}}", attr.name, chosen.join(", "))
            })
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

/// A fixed-length bit vector over all attribute-domain values.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Context {
    bits: u64,
    len: u8,
}

impl Context {
    pub fn zeros(len: usize) -> Self {
        assert!(
            len <= MAX_CONTEXT_BITS,
            "context length {len} exceeds {MAX_CONTEXT_BITS}"
        );
        Context {
            bits: 0,
            len: len as u8,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut c = Context::zeros(len);
        c.bits = Self::full_mask(len);
        c
    }

    /// Context whose integer interpretation (leftmost bit most significant) is `index`.
    pub fn from_index(index: u64, len: usize) -> Self {
        let mut c = Context::zeros(len);
        assert!(
            index & !Self::full_mask(len) == 0,
            "index {index} does not fit in {len} bits"
        );
        c.bits = index;
        c
    }

    fn full_mask(len: usize) -> u64 {
        if len == 64 {
            u64::MAX
        } else {
            (1u64 << len) - 1
        }
    }

    fn shift(&self, pos: usize) -> u32 {
        debug_assert!(pos < self.len());
        (self.len() - 1 - pos) as u32
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Ascending enumeration index.
    pub fn index(&self) -> u64 {
        self.bits
    }

    pub fn get(&self, pos: usize) -> bool {
        (self.bits >> self.shift(pos)) & 1 == 1
    }

    pub fn set(&mut self, pos: usize, on: bool) {
        let bit = 1u64 << self.shift(pos);
        if on {
            self.bits |= bit;
        } else {
            self.bits &= !bit;
        }
    }

    pub fn flipped(&self, pos: usize) -> Self {
        Context {
            bits: self.bits ^ (1u64 << self.shift(pos)),
            len: self.len,
        }
    }

    pub fn hamming_weight(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn hamming_distance(&self, other: &Context) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }

    /// True if every bit set in `other` is set in `self`.
    pub fn covers(&self, other: &Context) -> bool {
        self.bits & other.bits == other.bits
    }

    pub fn union(&self, other: &Context) -> Self {
        Context {
            bits: self.bits | other.bits,
            len: self.len,
        }
    }

    pub fn intersects(&self, other: &Context) -> bool {
        self.bits & other.bits != 0
    }

    pub(crate) fn raw(&self) -> u64 {
        self.bits
    }

    /// Parses a fixed-width `0`/`1` string.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() > MAX_CONTEXT_BITS {
            return Err(PcorError::format(
                "context",
                format!("`{s}` longer than {MAX_CONTEXT_BITS} bits"),
            ));
        }
        let mut ctx = Context::zeros(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => ctx.set(i, true),
                other => {
                    return Err(PcorError::format(
                        "context",
                        format!("unexpected character `{other}` in `{s}`"),
                    ))
                }
            }
        }
        Ok(ctx)
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Context<{self}>")
    }
}

impl FromStr for Context {
    type Err = PcorError;

    fn from_str(s: &str) -> Result<Self> {
        Context::parse(s)
    }
}

impl Serialize for Context {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Context {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Context::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: u64,
    /// Domain index of the record's value, one per attribute.
    pub values: Vec<u32>,
    pub metric: f64,
}

/// A dataset over a schema. Immutable once built; the per-record context
/// masks and the metric ordering are precomputed for fast population scans.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: Schema,
    records: Vec<Record>,
    masks: Vec<u64>,
    by_metric: Vec<u32>,
    // masks and metrics laid out in metric order, for sequential scans
    sorted_masks: Vec<u64>,
    sorted_metrics: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<Record>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != schema.m() {
                return Err(PcorError::Schema(format!(
                    "record {} has {} values, schema has {} attributes",
                    r.id,
                    r.values.len(),
                    schema.m()
                )));
            }
            for (a, &v) in r.values.iter().enumerate() {
                if v as usize >= schema.attributes()[a].domain.len() {
                    return Err(PcorError::Schema(format!(
                        "record {} value index {v} outside domain of `{}`",
                        r.id,
                        schema.attributes()[a].name
                    )));
                }
            }
            if !r.metric.is_finite() {
                return Err(PcorError::Schema(format!("record {} has a non-finite metric", r.id)));
            }
            if index.insert(r.id, i).is_some() {
                return Err(PcorError::Schema(format!("duplicate record id {}", r.id)));
            }
        }
        let masks: Vec<u64> = records.iter().map(|r| schema.record_context(r).raw()).collect();
        let mut by_metric: Vec<u32> = (0..records.len() as u32).collect();
        by_metric.sort_by(|&a, &b| records[a as usize].metric.total_cmp(&records[b as usize].metric));
        let sorted_masks = by_metric.iter().map(|&p| masks[p as usize]).collect();
        let sorted_metrics = by_metric.iter().map(|&p| records[p as usize].metric).collect();
        Ok(Dataset {
            schema,
            records,
            masks,
            by_metric,
            sorted_masks,
            sorted_metrics,
            index,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn record(&self, id: u64) -> Option<&Record> {
        self.position_of(id).map(|i| &self.records[i])
    }

    pub(crate) fn mask_at(&self, position: usize) -> u64 {
        self.masks[position]
    }

    /// Record positions sorted by ascending metric (ties by position).
    pub(crate) fn metric_order(&self) -> &[u32] {
        &self.by_metric
    }

    pub(crate) fn masks(&self) -> &[u64] {
        &self.masks
    }

    /// Context masks in [`Dataset::metric_order`].
    pub(crate) fn sorted_masks(&self) -> &[u64] {
        &self.sorted_masks
    }

    /// Ascending metric values, aligned with [`Dataset::sorted_masks`].
    pub(crate) fn sorted_metrics(&self) -> &[f64] {
        &self.sorted_metrics
    }

    /// Copy of the dataset without the records at the given positions.
    pub fn without_positions(&self, positions: &[usize]) -> Dataset {
        let drop: std::collections::HashSet<usize> = positions.iter().copied().collect();
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, r)| r.clone())
            .collect();
        Dataset::new(self.schema.clone(), records).expect("subset of a valid dataset is valid")
    }

    /// Writes the records as an RFC-4180 CSV with an `id` column first.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.schema.attributes().iter().map(|a| a.name.clone()));
        header.push(self.schema.metric_name().to_string());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.id.to_string()];
            for (a, &v) in r.values.iter().enumerate() {
                row.push(self.schema.attributes()[a].domain[v as usize].clone());
            }
            row.push(format_metric(r.metric));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| PcorError::format("csv", e.to_string()))?;
        Ok(())
    }
}

fn format_metric(x: f64) -> String {
    // shortest representation that round-trips
    format!("{x:?}")
}

fn csv_err(e: csv::Error) -> PcorError {
    PcorError::format("csv", e.to_string())
}

/// Records selected by a context, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub context: Context,
    pub member_ids: Vec<u64>,
    pub metric_values: Vec<f64>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    pub fn contains_id(&self, id: u64) -> bool {
        self.member_ids.contains(&id)
    }
}

/// Builds the context with exactly the bits for the given `(attribute, value)` pairs set.
pub fn encode_context<A: AsRef<str>, V: AsRef<str>>(predicates: &[(A, V)], schema: &Schema) -> Result<Context> {
    let mut ctx = Context::zeros(schema.t());
    for (attr, value) in predicates {
        let (attr, value) = (attr.as_ref(), value.as_ref());
        let a = schema
            .attribute_index(attr)
            .ok_or_else(|| PcorError::Schema(format!("unknown attribute `{attr}`")))?;
        let v = schema
            .value_index(a, value)
            .ok_or_else(|| PcorError::Schema(format!("value `{value}` not in domain of `{attr}`")))?;
        ctx.set(schema.position(a, v), true);
    }
    Ok(ctx)
}

/// True iff, for every attribute, the bit of the record's value is set.
pub fn contains(context: &Context, record: &Record, schema: &Schema) -> bool {
    record
        .values
        .iter()
        .enumerate()
        .all(|(a, &v)| context.get(schema.position(a, v as usize)))
}

pub fn filter(dataset: &Dataset, context: &Context) -> Population {
    let mut member_ids = Vec::new();
    let mut metric_values = Vec::new();
    for record in dataset.records() {
        if contains(context, record, dataset.schema()) {
            member_ids.push(record.id);
            metric_values.push(record.metric);
        }
    }
    Population {
        context: *context,
        member_ids,
        metric_values,
    }
}

/// The `t` contexts at Hamming distance one, in bit order.
pub fn neighbors(context: &Context) -> Vec<Context> {
    (0..context.len()).map(|i| context.flipped(i)).collect()
}

/// Loads a dataset from a CSV stream validated against a schema stream.
///
/// The header must name every schema attribute and the metric. An optional
/// `id` column supplies record ids; otherwise ids are 1-based row numbers.
pub fn load_dataset<D: Read, S: Read>(data: D, mut schema: S) -> Result<Dataset> {
    let mut text = String::new();
    schema
        .read_to_string(&mut text)
        .map_err(|e| PcorError::format("schema", e.to_string()))?;
    let schema = Schema::parse(&text)?;
    load_records(data, schema)
}

pub fn load_records<D: Read>(data: D, schema: Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(data);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);

    let attr_cols = schema
        .attributes()
        .iter()
        .map(|a| {
            column(&a.name).ok_or_else(|| PcorError::Ingestion {
                row: 0,
                column: a.name.clone(),
                message: "column missing from header".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let metric_col = column(schema.metric_name()).ok_or_else(|| PcorError::Ingestion {
        row: 0,
        column: schema.metric_name().to_string(),
        message: "column missing from header".into(),
    })?;
    let id_col = column("id");

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let rowno = i + 1;
        let row = row.map_err(|e| PcorError::Ingestion {
            row: rowno,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |col: usize, name: &str| -> Result<&str> {
            row.get(col).map(str::trim).ok_or_else(|| PcorError::Ingestion {
                row: rowno,
                column: name.to_string(),
                message: "missing field".into(),
            })
        };
        let id = match id_col {
            Some(c) => field(c, "id")?.parse::<u64>().map_err(|e| PcorError::Ingestion {
                row: rowno,
                column: "id".into(),
                message: format!("invalid id: {e}"),
            })?,
            None => rowno as u64,
        };
        let mut values = Vec::with_capacity(schema.m());
        for (a, &col) in attr_cols.iter().enumerate() {
            let name = &schema.attributes()[a].name;
            let raw = field(col, name)?;
            let v = schema.value_index(a, raw).ok_or_else(|| PcorError::Ingestion {
                row: rowno,
                column: name.clone(),
                message: format!("value `{raw}` outside declared domain"),
            })?;
            values.push(v as u32);
        }
        let raw_metric = field(metric_col, schema.metric_name())?;
        let metric = raw_metric
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| PcorError::Ingestion {
                row: rowno,
                column: schema.metric_name().to_string(),
                message: format!("non-numeric metric `{raw_metric}`"),
            })?;
        records.push(Record { id, values, metric });
    }
    Dataset::new(schema, records).map_err(|e| match e {
        PcorError::Schema(msg) => PcorError::Ingestion {
            row: 0,
            column: "id".into(),
            message: msg,
        },
        other => other,
    })
}

pub fn load_dataset_files(data: &Path, schema: &Path) -> Result<Dataset> {
    let d = std::fs::File::open(data).map_err(|e| PcorError::io(data, e))?;
    let s = std::fs::File::open(schema).map_err(|e| PcorError::io(schema, e))?;
    load_dataset(std::io::BufReader::new(d), std::io::BufReader::new(s))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub const SALARIES_SCHEMA: &str = "\
Jobtitle: CEO, Medical Doctor, Lawyer
City: Montreal, Ottawa, Toronto
District: Business, Historic, Diplomatic
metric: Salary
";

    /// Salaries are 100 + id except record 8 which earns 500.
    pub const SALARIES_CSV: &str = "\
id,Jobtitle,City,District,Salary
1,Medical Doctor,Montreal,Business,101
2,Lawyer,Toronto,Business,102
3,CEO,Ottawa,Diplomatic,103
4,Lawyer,Toronto,Business,104
5,Lawyer,Ottawa,Diplomatic,105
6,Medical Doctor,Toronto,Historic,106
7,Lawyer,Ottawa,Business,107
8,Lawyer,Ottawa,Diplomatic,500
9,CEO,Montreal,Historic,109
10,Medical Doctor,Toronto,Diplomatic,110
";

    pub fn salaries() -> Dataset {
        load_dataset(SALARIES_CSV.as_bytes(), SALARIES_SCHEMA.as_bytes()).unwrap()
    }
}
