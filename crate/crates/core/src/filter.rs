//! Scalar spectral responses `h(λ)` on the Laplacian spectrum `[0, 2]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::basis::{scalar_basis, BasisKind, ChannelRecurrence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterShape {
    /// `e^{-aλ²}`
    LowPass,
    /// `1 - e^{-aλ²}`
    HighPass,
    /// `e^{-a(λ-1)²}`
    BandPass,
    /// `1 - e^{-a(λ-1)²}`
    RejectionPass,
}

/// One of the named Gaussian-shaped reference filters, or a trivial one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredefinedFilter {
    Gaussian { shape: FilterShape, rate: u32 },
    AllPass,
    Zero,
}

impl PredefinedFilter {
    pub const fn gaussian(shape: FilterShape, rate: u32) -> Self {
        PredefinedFilter::Gaussian { shape, rate }
    }

    /// The twelve Gaussian reference filters followed by `all-pass` and `zero`.
    pub fn all() -> Vec<PredefinedFilter> {
        let mut out = Vec::with_capacity(14);
        for shape in [
            FilterShape::LowPass,
            FilterShape::HighPass,
            FilterShape::BandPass,
            FilterShape::RejectionPass,
        ] {
            for rate in [5, 10, 20] {
                out.push(PredefinedFilter::gaussian(shape, rate));
            }
        }
        out.push(PredefinedFilter::AllPass);
        out.push(PredefinedFilter::Zero);
        out
    }

    pub fn eval(self, lambda: f64) -> f64 {
        match self {
            PredefinedFilter::AllPass => 1.0,
            PredefinedFilter::Zero => 0.0,
            PredefinedFilter::Gaussian { shape, rate } => {
                let a = f64::from(rate);
                match shape {
                    FilterShape::LowPass => (-a * lambda * lambda).exp(),
                    FilterShape::HighPass => 1.0 - (-a * lambda * lambda).exp(),
                    FilterShape::BandPass => (-a * (lambda - 1.0).powi(2)).exp(),
                    FilterShape::RejectionPass => 1.0 - (-a * (lambda - 1.0).powi(2)).exp(),
                }
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            PredefinedFilter::AllPass => "all-pass".into(),
            PredefinedFilter::Zero => "zero".into(),
            PredefinedFilter::Gaussian { shape, rate } => {
                let s = match shape {
                    FilterShape::LowPass => "low-pass",
                    FilterShape::HighPass => "high-pass",
                    FilterShape::BandPass => "band-pass",
                    FilterShape::RejectionPass => "rejection-pass",
                };
                format!("{s}-{rate}")
            }
        }
    }
}

impl fmt::Display for PredefinedFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PredefinedFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PredefinedFilter::all()
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown filter {s:?}")))
    }
}

/// Evaluates a named filter at `λ`.
pub fn predefined_filter(name: &str, lambda: f64) -> Result<f64> {
    Ok(name.parse::<PredefinedFilter>()?.eval(lambda))
}

/// A spectral response usable by the exact filtering oracle.
#[derive(Clone)]
pub enum FilterSpec {
    Predefined(PredefinedFilter),
    /// `Σ_k α_k t_k(λ)` over a basis's scalar responses.
    Polynomial {
        basis: BasisKind,
        coeffs: Vec<f64>,
        cheb_shifted: bool,
        recurrence: Option<ChannelRecurrence>,
    },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterSpec::Predefined(p) => write!(f, "Predefined({p})"),
            FilterSpec::Polynomial { basis, coeffs, .. } => {
                write!(f, "Polynomial({basis}, {coeffs:?})")
            }
            FilterSpec::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl From<PredefinedFilter> for FilterSpec {
    fn from(p: PredefinedFilter) -> Self {
        FilterSpec::Predefined(p)
    }
}

impl FilterSpec {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        FilterSpec::Custom(Arc::new(f))
    }

    pub fn polynomial(basis: BasisKind, coeffs: Vec<f64>) -> Self {
        FilterSpec::Polynomial {
            basis,
            coeffs,
            cheb_shifted: false,
            recurrence: None,
        }
    }

    pub fn eval(&self, lambda: f64) -> Result<f64> {
        let v = match self {
            FilterSpec::Predefined(p) => p.eval(lambda),
            FilterSpec::Custom(f) => f(lambda),
            FilterSpec::Polynomial {
                basis,
                coeffs,
                cheb_shifted,
                recurrence,
            } => {
                if coeffs.is_empty() {
                    return Ok(0.0);
                }
                let t = scalar_basis(
                    *basis,
                    coeffs.len() - 1,
                    lambda,
                    *cheb_shifted,
                    recurrence.as_ref(),
                )?;
                coeffs.iter().zip(&t).map(|(a, b)| a * b).sum()
            }
        };
        if !v.is_finite() {
            return Err(Error::Numerical(format!("filter {self:?} is not finite at λ={lambda}")));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourteen_names_round_trip() {
        let all = PredefinedFilter::all();
        assert_eq!(all.len(), 14);
        for f in all {
            assert_eq!(f.name().parse::<PredefinedFilter>().unwrap(), f);
        }
        assert!(predefined_filter("notch", 0.0).is_err());
    }

    #[test]
    fn reference_values() {
        assert_eq!(predefined_filter("low-pass-5", 0.0).unwrap(), 1.0);
        assert_eq!(predefined_filter("high-pass-5", 0.0).unwrap(), 0.0);
        assert_eq!(predefined_filter("band-pass-10", 1.0).unwrap(), 1.0);
        assert_eq!(predefined_filter("rejection-pass-20", 1.0).unwrap(), 0.0);
        let v = predefined_filter("low-pass-10", 0.5).unwrap();
        assert!((v - (-2.5f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn polynomial_spec_monomial() {
        let f = FilterSpec::polynomial(BasisKind::Monomial, vec![0.0, 1.0]);
        assert_eq!(f.eval(0.0).unwrap(), 1.0);
        assert_eq!(f.eval(2.0).unwrap(), -1.0);
    }
}
