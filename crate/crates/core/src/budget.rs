//! Enumeration budget.
//!
//! Every exhaustive routine estimates how many objects it is about to visit
//! and refuses up front when the estimate exceeds the cap. The cap is read
//! from `OZLAB_BUDGET` (a plain integer) when present.

use crate::error::{OzError, Result};

pub const BUDGET_ENV: &str = "OZLAB_BUDGET";

/// Default cap: about 2.7e8 enumerated objects.
pub const DEFAULT_BUDGET: u128 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub cap: u128,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { cap: DEFAULT_BUDGET }
    }
}

impl Budget {
    pub fn new(cap: u128) -> Self {
        Budget { cap }
    }

    pub fn unlimited() -> Self {
        Budget { cap: u128::MAX }
    }

    /// Reads `OZLAB_BUDGET`, falling back to the default on absence.
    pub fn from_env() -> Result<Self> {
        match std::env::var(BUDGET_ENV) {
            Ok(raw) => raw
                .trim()
                .parse::<u128>()
                .map(Budget::new)
                .map_err(|_| OzError::precondition(format!("{BUDGET_ENV}={raw:?} is not an integer"))),
            Err(_) => Ok(Budget::default()),
        }
    }

    pub fn check(&self, what: &str, needed: u128) -> Result<()> {
        if needed > self.cap {
            Err(OzError::Budget { what: what.to_string(), needed, cap: self.cap })
        } else {
            Ok(())
        }
    }

    /// `2^bits`, saturating.
    pub fn check_pow2(&self, what: &str, bits: usize) -> Result<()> {
        let needed = if bits >= 127 { u128::MAX } else { 1u128 << bits };
        self.check(what, needed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_over_cap() {
        let b = Budget::new(1000);
        assert!(b.check("walks", 999).is_ok());
        let err = b.check("walks", 1001).unwrap_err();
        assert!(err.is_refusal());
        assert!(b.check_pow2("diagrams", 10).is_err());
        assert!(b.check_pow2("diagrams", 9).is_ok());
    }
}
