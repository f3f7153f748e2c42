//! Physical parameters, the complex-phase incommensurate potential and
//! the two-particle index map.
//!
//! Sites are 0-based throughout the library. Pair states `(n, m)` put the
//! spin-up particle on `n` and the spin-down particle on `m`, flattened
//! row-major as `k = n * L + m`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational modulation frequency `p / q` with `gcd(p, q) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rational {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidParameter(format!(
                "frequency {num}/{den} must have positive numerator and denominator"
            )));
        }
        if gcd(num, den) != 1 {
            return Err(Error::InvalidParameter(format!("frequency {num}/{den} is not in lowest terms")));
        }
        Ok(Self { num, den })
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse frequency {s:?} as p/q"));
        let (p, q) = s.trim().split_once('/').ok_or_else(bad)?;
        let p = p.trim().parse::<u64>().map_err(|_| bad())?;
        let q = q.trim().parse::<u64>().map_err(|_| bad())?;
        Rational::new(p, q)
    }
}

impl Serialize for Rational {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ratio `q_n / q_{n+1}` of consecutive Fibonacci numbers (`q_0 = 0`, `q_1 = 1`).
pub fn fibonacci_approximant(n: u32) -> Result<Rational> {
    if n == 0 {
        return Err(Error::InvalidParameter("Fibonacci order must be >= 1".into()));
    }
    let (mut prev, mut cur) = (0u64, 1u64);
    for _ in 0..n {
        let next = prev.checked_add(cur).ok_or(Error::Overflow("Fibonacci number"))?;
        (prev, cur) = (cur, next);
    }
    // consecutive Fibonacci numbers are always coprime
    Rational::new(prev, cur)
}

/// `amplitude * cos(x + i h) - i loss` using
/// `cos(x + i y) = cos x cosh y - i sin x sinh y`.
pub fn complex_cosine(amplitude: f64, x: f64, h: f64, loss: f64) -> Complex64 {
    Complex64::new(amplitude * x.cos() * h.cosh(), -amplitude * x.sin() * h.sinh() - loss)
}

/// All physical and lattice parameters of the model.
///
/// The ring size `L` is always the denominator of the frequency, which keeps
/// the potential exactly periodic under `l -> l + L`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelParams {
    hopping: f64,
    interaction: f64,
    amplitude: f64,
    frequency: Rational,
    phase: f64,
    non_hermiticity: f64,
    loss_rate: f64,
}

impl Default for ModelParams {
    /// `J = 1, U = 0, V = 0.15, alpha = 34/55, theta = 0, h = 0, gamma = 0`.
    fn default() -> Self {
        Self {
            hopping: 1.0,
            interaction: 0.0,
            amplitude: 0.15,
            frequency: Rational { num: 34, den: 55 },
            phase: 0.0,
            non_hermiticity: 0.0,
            loss_rate: 0.0,
        }
    }
}

fn finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {value}")))
    }
}

impl ModelParams {
    pub fn new(
        hopping: f64,
        interaction: f64,
        amplitude: f64,
        frequency: Rational,
        phase: f64,
        non_hermiticity: f64,
    ) -> Result<Self> {
        Self::default()
            .with_hopping(hopping)?
            .with_interaction(interaction)?
            .with_amplitude(amplitude)?
            .with_frequency(frequency)?
            .with_phase(phase)?
            .with_non_hermiticity(non_hermiticity)
    }

    pub fn with_hopping(mut self, hopping: f64) -> Result<Self> {
        self.hopping = finite("J", hopping)?;
        Ok(self)
    }

    pub fn with_interaction(mut self, interaction: f64) -> Result<Self> {
        self.interaction = finite("U", interaction)?;
        Ok(self)
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        if finite("V", amplitude)? < 0.0 {
            return Err(Error::InvalidParameter(format!("V must be >= 0, got {amplitude}")));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn with_frequency(mut self, frequency: Rational) -> Result<Self> {
        if frequency.den < 2 {
            return Err(Error::InvalidParameter(format!("frequency {frequency} gives L = {} < 2", frequency.den)));
        }
        self.frequency = frequency;
        Ok(self)
    }

    pub fn with_phase(mut self, phase: f64) -> Result<Self> {
        self.phase = finite("theta", phase)?;
        Ok(self)
    }

    pub fn with_non_hermiticity(mut self, h: f64) -> Result<Self> {
        if finite("h", h)? < 0.0 {
            return Err(Error::InvalidParameter(format!("h must be >= 0, got {h}")));
        }
        self.non_hermiticity = h;
        Ok(self)
    }

    pub fn with_loss_rate(mut self, gamma: f64) -> Result<Self> {
        self.loss_rate = finite("gamma", gamma)?;
        Ok(self)
    }

    /// Sets a parameter by its config/sweep name.
    pub fn with_named(self, name: &str, value: f64) -> Result<Self> {
        match name {
            "J" | "hopping" => self.with_hopping(value),
            "U" | "interaction" => self.with_interaction(value),
            "V" | "amplitude" => self.with_amplitude(value),
            "theta" | "phase" => self.with_phase(value),
            "h" | "non_hermiticity" => self.with_non_hermiticity(value),
            "gamma" | "loss_rate" => self.with_loss_rate(value),
            _ => Err(Error::InvalidParameter(format!("unknown parameter {name:?}"))),
        }
    }

    pub fn hopping(&self) -> f64 {
        self.hopping
    }

    pub fn interaction(&self) -> f64 {
        self.interaction
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn frequency(&self) -> Rational {
        self.frequency
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn non_hermiticity(&self) -> f64 {
        self.non_hermiticity
    }

    pub fn loss_rate(&self) -> f64 {
        self.loss_rate
    }

    /// Ring size `L = q`.
    pub fn sites(&self) -> usize {
        self.frequency.den as usize
    }

    /// Two-particle Hilbert space dimension `L^2`.
    pub fn pair_dim(&self) -> usize {
        self.sites() * self.sites()
    }

    /// On-site energy `V cos(2 pi alpha l + theta + i h) - i gamma`.
    ///
    /// `l` is reduced modulo `L` and `p l mod q` is taken in integers, so the
    /// result is bit-identical for `l` and `l + L`.
    pub fn potential(&self, l: usize) -> Complex64 {
        self.potential_at_phase(l, self.phase)
    }

    /// Same as [`potential`](Self::potential) with the real phase replaced.
    pub fn potential_at_phase(&self, l: usize, phase: f64) -> Complex64 {
        let q = self.frequency.den;
        let residue = ((l as u64 % q) as u128 * self.frequency.num as u128 % q as u128) as f64;
        let x = TAU * residue / q as f64 + phase;
        complex_cosine(self.amplitude, x, self.non_hermiticity, self.loss_rate)
    }

    /// All on-site energies for `l = 0..L`.
    pub fn potentials(&self) -> Vec<Complex64> {
        (0..self.sites()).map(|l| self.potential(l)).collect()
    }

    pub fn potentials_at_phase(&self, phase: f64) -> Vec<Complex64> {
        (0..self.sites()).map(|l| self.potential_at_phase(l, phase)).collect()
    }

    /// Index of site `l + shift` on the ring.
    pub fn wrap(&self, l: usize, shift: isize) -> usize {
        let size = self.sites() as isize;
        (l as isize + shift).rem_euclid(size) as usize
    }
}

/// Ordered pair of site indices `(n, m)` on the two-particle lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub n: usize,
    pub m: usize,
}

impl PairIndex {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }

    /// Row-major flat index `n * L + m`.
    pub fn flat(&self, sites: usize) -> Result<usize> {
        if self.n >= sites || self.m >= sites {
            return Err(Error::IndexOutOfRange { n: self.n, m: self.m, sites });
        }
        Ok(self.n * sites + self.m)
    }

    pub fn from_flat(k: usize, sites: usize) -> Result<Self> {
        if sites == 0 || k >= sites * sites {
            return Err(Error::IndexOutOfRange { n: k, m: 0, sites });
        }
        Ok(Self { n: k / sites, m: k % sites })
    }

    pub fn swapped(&self) -> Self {
        Self { n: self.m, m: self.n }
    }
}

/// Flat key-value parameter file (`J = 1.0`, `alpha = "34/55"`, ...).
///
/// Every field is optional; missing values keep the defaults of
/// [`ModelParams::default`]. `fibonacci = n` is an alternative to `alpha`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(alias = "J", skip_serializing_if = "Option::is_none")]
    pub hopping: Option<f64>,
    #[serde(alias = "U", skip_serializing_if = "Option::is_none")]
    pub interaction: Option<f64>,
    #[serde(alias = "V", skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(alias = "alpha", skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Rational>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fibonacci: Option<u32>,
    #[serde(alias = "theta", skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(alias = "h", skip_serializing_if = "Option::is_none")]
    pub non_hermiticity: Option<f64>,
    #[serde(alias = "gamma", skip_serializing_if = "Option::is_none")]
    pub loss_rate: Option<f64>,
    /// Optional consistency check: must equal the frequency denominator.
    #[serde(alias = "L", skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
}

impl ModelConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Values set in `other` take precedence.
    pub fn merged(&self, other: &ModelConfig) -> ModelConfig {
        let frequency_override = other.frequency.is_some() || other.fibonacci.is_some();
        ModelConfig {
            hopping: other.hopping.or(self.hopping),
            interaction: other.interaction.or(self.interaction),
            amplitude: other.amplitude.or(self.amplitude),
            frequency: if frequency_override { other.frequency } else { self.frequency },
            fibonacci: if frequency_override { other.fibonacci } else { self.fibonacci },
            phase: other.phase.or(self.phase),
            non_hermiticity: other.non_hermiticity.or(self.non_hermiticity),
            loss_rate: other.loss_rate.or(self.loss_rate),
            sites: other.sites.or(self.sites),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let mut p = ModelParams::default();
        if let Some(v) = self.hopping {
            p = p.with_hopping(v)?;
        }
        if let Some(v) = self.interaction {
            p = p.with_interaction(v)?;
        }
        if let Some(v) = self.amplitude {
            p = p.with_amplitude(v)?;
        }
        match (self.frequency, self.fibonacci) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidParameter("give either alpha or fibonacci, not both".into()))
            }
            (Some(f), None) => p = p.with_frequency(f)?,
            (None, Some(n)) => p = p.with_frequency(fibonacci_approximant(n)?)?,
            (None, None) => {}
        }
        if let Some(v) = self.phase {
            p = p.with_phase(v)?;
        }
        if let Some(v) = self.non_hermiticity {
            p = p.with_non_hermiticity(v)?;
        }
        if let Some(v) = self.loss_rate {
            p = p.with_loss_rate(v)?;
        }
        if let Some(l) = self.sites {
            if l != p.sites() {
                return Err(Error::InvalidParameter(format!(
                    "L = {l} must equal the frequency denominator {}",
                    p.sites()
                )));
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn potential_examples() {
        let p = ModelParams::new(1.0, 0.0, 1.0, Rational::new(1, 2).unwrap(), 0.0, 0.0).unwrap();
        assert!(close(p.potential(0), Complex64::new(1.0, 0.0), 1e-15));
        assert!(close(p.potential(1), Complex64::new(-1.0, 0.0), 1e-15));

        let p = ModelParams::default().with_non_hermiticity(1.0).unwrap();
        let expected = 0.15 * 1.0f64.cosh();
        assert!(close(p.potential(0), Complex64::new(expected, 0.0), 1e-15));
        assert!((expected - 0.23145).abs() < 5e-5);
    }

    #[test]
    fn fibonacci_examples() {
        assert_eq!(fibonacci_approximant(9).unwrap(), Rational::new(34, 55).unwrap());
        assert_eq!(fibonacci_approximant(1).unwrap(), Rational::new(1, 1).unwrap());
        assert_eq!(fibonacci_approximant(10).unwrap(), Rational::new(55, 89).unwrap());
        assert!(fibonacci_approximant(0).is_err());
        assert!(matches!(fibonacci_approximant(200), Err(Error::Overflow(_))));
    }

    #[test]
    fn flat_index_examples() {
        assert_eq!(PairIndex::new(0, 0).flat(55).unwrap(), 0);
        assert_eq!(PairIndex::new(1, 0).flat(55).unwrap(), 55);
        assert_eq!(PairIndex::new(26, 27).flat(55).unwrap(), 1457);
        assert!(PairIndex::new(55, 0).flat(55).is_err());
        assert!(PairIndex::from_flat(3025, 55).is_err());
    }

    #[test]
    fn rational_validation() {
        assert!(Rational::new(2, 4).is_err());
        assert!(Rational::new(0, 5).is_err());
        assert_eq!("13/21".parse::<Rational>().unwrap(), Rational::new(13, 21).unwrap());
        assert!("13:21".parse::<Rational>().is_err());
        let one = ModelParams::default().with_frequency(Rational::new(1, 1).unwrap());
        assert!(one.is_err());
    }

    #[test]
    fn parameter_invariants() {
        assert!(ModelParams::default().with_amplitude(-0.1).is_err());
        assert!(ModelParams::default().with_non_hermiticity(-1.0).is_err());
        assert!(ModelParams::default().with_hopping(f64::NAN).is_err());
        assert!(ModelParams::default().with_named("L", 3.0).is_err());
    }

    #[test]
    fn config_parsing_and_precedence() {
        let cfg = ModelConfig::from_toml_str("J = 1.0\nU = 10.0\nalpha = \"13/21\"\nh = 0.5\n").unwrap();
        let p = cfg.to_params().unwrap();
        assert_eq!(p.sites(), 21);
        assert_eq!(p.interaction(), 10.0);

        let flags = ModelConfig { interaction: Some(3.0), fibonacci: Some(9), ..Default::default() };
        let p = cfg.merged(&flags).to_params().unwrap();
        assert_eq!(p.interaction(), 3.0);
        assert_eq!(p.sites(), 55);
        assert_eq!(p.non_hermiticity(), 0.5);

        let bad = ModelConfig::from_toml_str("alpha = \"34/55\"\nL = 21\n").unwrap();
        assert!(bad.to_params().is_err());
        assert!(ModelConfig::from_toml_str("bogus = 1").is_err());
    }
}
