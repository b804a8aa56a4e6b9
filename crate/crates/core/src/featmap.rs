//! Polynomial dictionary `b(x)`.
//!
//! The dictionary holds every monomial of total degree at most `max_order` in
//! the `K` input coordinates, each distinct monomial exactly once. Terms are
//! ordered by degree, then lexicographically by their (non-decreasing) index
//! tuple. For `K = 2`, order 2 this gives `[1, a, b, a², ab, b²]`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DesignMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Term {
    /// Index of the term this one extends by one factor, `None` for degree one.
    parent: Option<usize>,
    var: usize,
}

/// Polynomial feature map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DictionaryParams", into = "DictionaryParams")]
pub struct DictionarySpec {
    input_dim: usize,
    max_order: usize,
    include_intercept: bool,
    // Non-constant terms in output order.
    terms: Vec<Term>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct DictionaryParams {
    input_dim: usize,
    max_order: usize,
    include_intercept: bool,
}

impl TryFrom<DictionaryParams> for DictionarySpec {
    type Error = Error;

    fn try_from(p: DictionaryParams) -> Result<Self> {
        DictionarySpec::new(p.input_dim, p.max_order, p.include_intercept)
    }
}

impl From<DictionarySpec> for DictionaryParams {
    fn from(d: DictionarySpec) -> Self {
        DictionaryParams {
            input_dim: d.input_dim,
            max_order: d.max_order,
            include_intercept: d.include_intercept,
        }
    }
}

impl DictionarySpec {
    pub fn new(input_dim: usize, max_order: usize, include_intercept: bool) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("dictionary input_dim must be positive".into()));
        }
        if max_order == 0 {
            return Err(Error::Config("dictionary max_order must be positive".into()));
        }
        let mut terms: Vec<Term> = (0..input_dim)
            .map(|var| Term { parent: None, var })
            .collect();
        // Lexicographic order within a degree follows from extending each term
        // of the previous degree, in order, by every variable >= its last one.
        let mut prev = 0..input_dim;
        for _ in 1..max_order {
            let start = terms.len();
            for p in prev.clone() {
                let last = terms[p].var;
                for var in last..input_dim {
                    terms.push(Term {
                        parent: Some(p),
                        var,
                    });
                }
            }
            prev = start..terms.len();
        }
        Ok(Self {
            input_dim,
            max_order,
            include_intercept,
            terms,
        })
    }

    /// Order-two dictionary with intercept, the default for the simulation study.
    pub fn quadratic(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, 2, true)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    /// Number of dictionary functions `J`.
    pub fn output_dim(&self) -> usize {
        self.terms.len() + usize::from(self.include_intercept)
    }

    /// Index of the constant term, if present.
    pub fn intercept_index(&self) -> Option<usize> {
        self.include_intercept.then_some(0)
    }

    /// Variable indices of each output term (empty for the intercept).
    pub fn exponents(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.output_dim());
        if self.include_intercept {
            out.push(Vec::new());
        }
        let mut cache: Vec<Vec<usize>> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut v = t.parent.map_or_else(Vec::new, |p| cache[p].clone());
            v.push(t.var);
            cache.push(v);
        }
        out.extend(cache);
        out
    }

    /// Writes `b(x)` into `out`, which must have length `output_dim()`.
    pub fn expand_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape("dictionary input", self.input_dim, x.len()));
        }
        if out.len() != self.output_dim() {
            return Err(Error::shape("dictionary output", self.output_dim(), out.len()));
        }
        let offset = usize::from(self.include_intercept);
        if self.include_intercept {
            out[0] = 1.0;
        }
        for (i, t) in self.terms.iter().enumerate() {
            let base = t.parent.map_or(1.0, |p| out[offset + p]);
            out[offset + i] = base * x[t.var];
        }
        Ok(())
    }

    pub fn expand(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.expand_into(x, &mut out)?;
        Ok(out)
    }

    pub fn expand_matrix(&self, data: &Dataset) -> Result<DesignMatrix> {
        if data.ncols() != self.input_dim {
            return Err(Error::shape("dataset columns", self.input_dim, data.ncols()));
        }
        let j = self.output_dim();
        let mut values = vec![0.0; data.nrows() * j];
        for (row, out) in data.rows().zip(values.chunks_exact_mut(j)) {
            self.expand_into(row, out)?;
        }
        DesignMatrix::new(data.nrows(), j, values)
    }
}

/// `expand(spec, x)`.
pub fn expand(spec: &DictionarySpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.expand(x)
}

/// `expand_matrix(spec, data)`.
pub fn expand_matrix(spec: &DictionarySpec, data: &Dataset) -> Result<DesignMatrix> {
    spec.expand_matrix(data)
}
