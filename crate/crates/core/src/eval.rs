//! Retrieval evaluation: exact nearest-neighbor ground truth, Hamming
//! ranking, and mean average precision.
//!
//! All rankings are deterministic: candidates are ordered by distance with
//! ties broken by ascending database index.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::io::{pack_codes, packed_code_bytes};
use crate::linalg::ensure_finite;

/// Per-query lists of the true nearest database indices, all of one length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    lists: Vec<Vec<u32>>,
}

impl GroundTruth {
    pub fn new(lists: Vec<Vec<u32>>) -> Result<Self> {
        if lists.is_empty() {
            return Err(Error::Invalid("ground truth has no queries".into()));
        }
        let k = lists[0].len();
        if k == 0 {
            return Err(Error::Invalid("ground truth lists are empty".into()));
        }
        for (q, list) in lists.iter().enumerate() {
            if list.len() != k {
                return Err(Error::Invalid(format!(
                    "query {q} has {} neighbors, expected {k}",
                    list.len()
                )));
            }
            let unique: HashSet<u32> = list.iter().copied().collect();
            if unique.len() != k {
                return Err(Error::Invalid(format!(
                    "query {q} lists a duplicate neighbor"
                )));
            }
        }
        Ok(Self { lists })
    }

    /// Neighbors per query.
    pub fn k(&self) -> usize {
        self.lists[0].len()
    }

    pub fn query_count(&self) -> usize {
        self.lists.len()
    }

    pub fn neighbors(&self, query: usize) -> &[u32] {
        &self.lists[query]
    }

    /// Reinterpret an integer-vector matrix (one column per query) as ground
    /// truth, rejecting negative or out-of-range indices.
    pub fn from_index_matrix(matrix: &DMatrix<i32>, database_size: usize) -> Result<Self> {
        let mut lists = Vec::with_capacity(matrix.ncols());
        for (q, col) in matrix.column_iter().enumerate() {
            let mut list = Vec::with_capacity(matrix.nrows());
            for &v in col.iter() {
                if v < 0 {
                    return Err(Error::Invalid(format!(
                        "query {q} has negative neighbor index {v}"
                    )));
                }
                if v as usize >= database_size {
                    return Err(Error::Invalid(format!(
                        "query {q} references index {v}, database has {database_size} items"
                    )));
                }
                list.push(v as u32);
            }
            lists.push(list);
        }
        Self::new(lists)
    }

    /// One column per query, suitable for the integer-vector writer.
    pub fn to_index_matrix(&self) -> DMatrix<i32> {
        DMatrix::from_fn(self.k(), self.query_count(), |r, q| self.lists[q][r] as i32)
    }
}

/// Options shared by the ranking routines.
#[derive(Debug, Clone, Copy, Default)]
pub struct RankingOptions {
    /// Keep only the first `K` results per query.
    pub truncate: Option<usize>,
    /// Drop the database item whose index equals the query index (for query
    /// sets sampled from the database itself).
    pub skip_identity: bool,
}

/// Exact `k`-nearest-neighbor ground truth under squared Euclidean distance.
pub fn build_ground_truth(
    database: &DMatrix<f64>,
    queries: &DMatrix<f64>,
    k: usize,
    skip_identity: bool,
) -> Result<GroundTruth> {
    if database.nrows() != queries.nrows() {
        return Err(Error::Shape(format!(
            "database dimension {} does not match query dimension {}",
            database.nrows(),
            queries.nrows()
        )));
    }
    ensure_finite(database, "database")?;
    ensure_finite(queries, "queries")?;
    let available = if skip_identity {
        database.ncols().saturating_sub(1)
    } else {
        database.ncols()
    };
    if k == 0 || k > available {
        return Err(Error::Invalid(format!(
            "k = {k} is out of range for {available} candidates"
        )));
    }

    let lists: Vec<Vec<u32>> = (0..queries.ncols())
        .into_par_iter()
        .map(|q| {
            let query = queries.column(q);
            let mut scored: Vec<(f64, u32)> = (0..database.ncols())
                .filter(|&i| !(skip_identity && i == q))
                .map(|i| ((database.column(i) - query).norm_squared(), i as u32))
                .collect();
            scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scored.truncate(k);
            scored.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    GroundTruth::new(lists)
}

fn hamming_distance(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Rank every database code against every query code by Hamming distance,
/// ties broken by ascending index. Returns one index list per query.
pub fn hamming_rank(
    database: &BinaryCodes,
    queries: &BinaryCodes,
    options: &RankingOptions,
) -> Result<Vec<Vec<u32>>> {
    if database.code_length() != queries.code_length() {
        return Err(Error::Shape(format!(
            "database codes have length {}, query codes {}",
            database.code_length(),
            queries.code_length()
        )));
    }
    if database.count() == 0 || queries.count() == 0 {
        return Err(Error::Shape("ranking needs non-empty code sets".into()));
    }
    let stride = packed_code_bytes(database.code_length());
    let db = pack_codes(database);
    let qs = pack_codes(queries);

    let lists: Vec<Vec<u32>> = (0..queries.count())
        .into_par_iter()
        .map(|q| {
            let query = &qs[q * stride..(q + 1) * stride];
            let mut scored: Vec<(u32, u32)> = (0..database.count())
                .filter(|&i| !(options.skip_identity && i == q))
                .map(|i| {
                    (
                        hamming_distance(query, &db[i * stride..(i + 1) * stride]),
                        i as u32,
                    )
                })
                .collect();
            scored.sort_unstable();
            if let Some(depth) = options.truncate {
                scored.truncate(depth);
            }
            scored.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    Ok(lists)
}

/// Average precision of each ranked list against its ground-truth list:
/// `AP = (sum over relevant ranks r of hits(r)/r) / min(k, K)` with `K` the
/// evaluated (possibly truncated) list length.
pub fn average_precisions(ranked: &[Vec<u32>], truth: &GroundTruth) -> Result<Vec<f64>> {
    if ranked.len() != truth.query_count() {
        return Err(Error::Shape(format!(
            "{} ranked lists but {} ground-truth queries",
            ranked.len(),
            truth.query_count()
        )));
    }
    let mut values = Vec::with_capacity(ranked.len());
    for (q, list) in ranked.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::Invalid(format!("query {q} has an empty ranking")));
        }
        let relevant: HashSet<u32> = truth.neighbors(q).iter().copied().collect();
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (rank, index) in list.iter().enumerate() {
            if relevant.contains(index) {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        values.push(sum / truth.k().min(list.len()) as f64);
    }
    Ok(values)
}

/// Mean of [`average_precisions`] over all queries.
pub fn mean_average_precision(ranked: &[Vec<u32>], truth: &GroundTruth) -> Result<f64> {
    let values = average_precisions(ranked, truth)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
