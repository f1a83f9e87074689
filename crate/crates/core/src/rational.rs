//! Exact weight arithmetic for enumerated contexts.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

pub(crate) fn from_f64(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

pub(crate) fn frac(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub(crate) fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Interned weight values; a per-factor sum is a count vector over classes,
/// so the rational arithmetic happens once per distinct weight.
#[derive(Debug, Clone, Default)]
pub(crate) struct WeightClasses {
    values: Vec<BigRational>,
    index: HashMap<BigRational, u32>,
}

impl WeightClasses {
    pub fn intern(&mut self, w: &BigRational) -> u32 {
        if let Some(&i) = self.index.get(w) {
            return i;
        }
        let i = self.values.len() as u32;
        self.values.push(w.clone());
        self.index.insert(w.clone(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn total(&self, counts: &[u64]) -> BigRational {
        let mut acc = BigRational::zero();
        for (w, &c) in self.values.iter().zip(counts) {
            if c > 0 {
                acc += w * BigRational::from_integer(BigInt::from(c));
            }
        }
        acc
    }
}
