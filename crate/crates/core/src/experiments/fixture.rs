//! Synthetic datasets with known structure: categorical attributes with
//! skewed value frequencies, metrics that depend on the subgroup, and
//! planted hidden and global outliers.

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{rng_for, Purpose};
use crate::dataset::{Attribute, Dataset, Record, Schema};
use crate::error::{PcorError, Result};

pub const GENERATOR: &str = "pcor-synthetic/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    /// Domain size per attribute; their sum is `t`.
    pub domains: Vec<usize>,
    pub records: usize,
    /// Declared values that no record uses, taken from the end of the
    /// domains in turn.
    pub absent_values: usize,
    /// Records moved far above their own subgroup but kept inside the
    /// overall metric range.
    pub hidden_outliers: usize,
    /// Records moved far above every other record.
    pub global_outliers: usize,
    pub base: f64,
    /// Each attribute value shifts the subgroup mean by up to this much.
    pub spread: f64,
    pub noise_sd: f64,
    /// Hidden outliers sit this many noise deviations above their subgroup.
    pub hidden_shift: f64,
    /// Value `j` of a domain is drawn with weight `1 / (j + 1)^skew`.
    pub skew: f64,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            domains: vec![5, 5, 4],
            records: 5000,
            absent_values: 1,
            hidden_outliers: 20,
            global_outliers: 2,
            base: 50_000.0,
            spread: 15_000.0,
            noise_sd: 2_500.0,
            hidden_shift: 6.0,
            skew: 1.0,
            seed: 1,
        }
    }
}

impl FixtureParams {
    pub fn t(&self) -> usize {
        self.domains.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PcorError::Config(m));
        if self.domains.is_empty() || self.domains.contains(&0) {
            return bad("every attribute needs a non-empty domain".into());
        }
        if self.t() > crate::dataset::MAX_CONTEXT_BITS {
            return bad(format!("t = {} exceeds {}", self.t(), crate::dataset::MAX_CONTEXT_BITS));
        }
        // each attribute must keep at least one value in use
        let mut absent = vec![0usize; self.domains.len()];
        for i in 0..self.absent_values {
            absent[i % self.domains.len()] += 1;
        }
        if absent.iter().zip(&self.domains).any(|(a, d)| a >= d) {
            return bad(format!(
                "{} absent values leave an attribute without values",
                self.absent_values
            ));
        }
        if self.hidden_outliers + self.global_outliers > self.records {
            return bad("more planted outliers than records".into());
        }
        if !(self.noise_sd > 0.0) || !(self.spread >= 0.0) || !(self.skew >= 0.0) {
            return bad("noise_sd must be positive, spread and skew non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub generator: String,
    pub params: FixtureParams,
    pub t: usize,
    pub hidden_outliers: Vec<u64>,
    pub global_outliers: Vec<u64>,
    /// `attribute=value` pairs declared in the schema but unused.
    pub absent: Vec<String>,
}

pub fn generate_fixture(params: &FixtureParams) -> Result<(Dataset, FixtureMeta)> {
    params.validate()?;
    let m = params.domains.len();
    let mut rng = rng_for(params.seed, Purpose::Fixture, 0);
    let attributes: Vec<Attribute> = params
        .domains
        .iter()
        .enumerate()
        .map(|(a, &d)| Attribute {
            name: format!("A{}", a + 1),
            domain: (0..d).map(|v| format!("A{}-{}", a + 1, v + 1)).collect(),
        })
        .collect();
    let mut present: Vec<usize> = params.domains.clone();
    let mut absent = Vec::new();
    for i in 0..params.absent_values {
        let a = i % m;
        present[a] -= 1;
        absent.push(format!("{}={}", attributes[a].name, attributes[a].domain[present[a]]));
    }
    // skewed value frequencies so populations differ in size
    let pickers: Vec<WeightedIndex<f64>> = present
        .iter()
        .map(|&p| WeightedIndex::new((0..p).map(|j| (j as f64 + 1.0).powf(-params.skew))).expect("positive weights"))
        .collect();
    let offsets: Vec<Vec<f64>> = params
        .domains
        .iter()
        .map(|&d| (0..d).map(|_| rng.random_range(-1.0..=1.0) * params.spread).collect())
        .collect();
    let noise = Normal::new(0.0, params.noise_sd).expect("positive sd");
    let mut records: Vec<Record> = (0..params.records)
        .map(|i| {
            let values: Vec<u32> = pickers.iter().map(|p| p.sample(&mut rng) as u32).collect();
            let mean = params.base
                + values
                    .iter()
                    .enumerate()
                    .map(|(a, &v)| offsets[a][v as usize])
                    .sum::<f64>();
            Record {
                id: i as u64 + 1,
                values,
                metric: (mean + noise.sample(&mut rng)).round(),
            }
        })
        .collect();
    let planted = sample(
        &mut rng,
        params.records,
        params.hidden_outliers + params.global_outliers,
    )
    .into_vec();
    let top = records.iter().map(|r| r.metric).fold(f64::MIN, f64::max);
    let mut hidden_ids = Vec::new();
    let mut global_ids = Vec::new();
    for (k, &pos) in planted.iter().enumerate() {
        let r = &mut records[pos];
        if k < params.hidden_outliers {
            let mean = params.base
                + r.values
                    .iter()
                    .enumerate()
                    .map(|(a, &v)| offsets[a][v as usize])
                    .sum::<f64>();
            r.metric = (mean + params.hidden_shift * params.noise_sd).round();
            hidden_ids.push(r.id);
        } else {
            r.metric = (top + 4.0 * params.spread * (1.0 + k as f64 * 0.1)).round();
            global_ids.push(r.id);
        }
    }
    hidden_ids.sort_unstable();
    global_ids.sort_unstable();
    let schema = Schema::new(attributes, "Salary")?;
    let dataset = Dataset::new(schema, records)?;
    let meta = FixtureMeta {
        generator: GENERATOR.into(),
        params: params.clone(),
        t: params.t(),
        hidden_outliers: hidden_ids,
        global_outliers: global_ids,
        absent,
    };
    Ok((dataset, meta))
}
