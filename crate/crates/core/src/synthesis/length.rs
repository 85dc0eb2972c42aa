use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthesisError;

/// Distribution of query lengths in terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthDistribution {
    UniformRange { min: usize, max: usize },
    Histogram { pmf: BTreeMap<usize, f64> },
}

impl LengthDistribution {
    pub fn uniform(min: usize, max: usize) -> Result<Self, SynthesisError> {
        if min == 0 || min > max {
            return Err(SynthesisError::InvalidLengthDistribution(format!(
                "uniform range [{min}, {max}] must satisfy 1 <= min <= max"
            )));
        }
        Ok(LengthDistribution::UniformRange { min, max })
    }

    /// Probabilities must sum to 1 within 1e-9 and lengths must be at least 1.
    pub fn histogram(pmf: BTreeMap<usize, f64>) -> Result<Self, SynthesisError> {
        let bad = |m: String| Err(SynthesisError::InvalidLengthDistribution(m));
        if pmf.is_empty() {
            return bad("empty histogram".into());
        }
        if pmf.contains_key(&0) {
            return bad("length 0 is not allowed".into());
        }
        if let Some((l, p)) = pmf.iter().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return bad(format!("length {l} has invalid probability {p}"));
        }
        let total: f64 = pmf.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("probabilities sum to {total}"));
        }
        Ok(LengthDistribution::Histogram { pmf })
    }

    /// Parse a pmf file: one `length probability` pair per line, `#` comments.
    pub fn parse_pmf(text: &str) -> Result<Self, SynthesisError> {
        let mut pmf = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SynthesisError::Parse {
                line: n + 1,
                message,
            };
            let mut parts = line.split_whitespace();
            let (Some(l), Some(p), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(format!("expected `length probability`, got `{line}`")));
            };
            let l: usize = l.parse().map_err(|e| err(format!("length `{l}`: {e}")))?;
            let p: f64 = p.parse().map_err(|e| err(format!("probability `{p}`: {e}")))?;
            if pmf.insert(l, p).is_some() {
                return Err(err(format!("length {l} listed twice")));
            }
        }
        Self::histogram(pmf)
    }

    /// `uniform:MIN:MAX`, or a path to a pmf file.
    pub fn from_spec(spec: &str) -> Result<Self, SynthesisError> {
        if let Some(rest) = spec.strip_prefix("uniform:") {
            let bounds: Vec<&str> = rest.split(':').collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| {
                    SynthesisError::InvalidLengthDistribution(format!("`{spec}`: {e}"))
                })
            };
            return match bounds.as_slice() {
                [a, b] => Self::uniform(parse(a)?, parse(b)?),
                _ => Err(SynthesisError::InvalidLengthDistribution(format!(
                    "`{spec}`: expected uniform:MIN:MAX"
                ))),
            };
        }
        Self::parse_pmf(&std::fs::read_to_string(Path::new(spec))?)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            LengthDistribution::UniformRange { min, max } => rng.gen_range(*min..=*max),
            LengthDistribution::Histogram { pmf } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (&l, &p) in pmf {
                    acc += p;
                    if u < acc {
                        return l;
                    }
                }
                *pmf.keys().next_back().expect("non-empty")
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            LengthDistribution::UniformRange { min, max } => (*min + *max) as f64 / 2.0,
            LengthDistribution::Histogram { pmf } => pmf.iter().map(|(&l, &p)| l as f64 * p).sum(),
        }
    }

    pub fn max_len(&self) -> usize {
        match self {
            LengthDistribution::UniformRange { max, .. } => *max,
            LengthDistribution::Histogram { pmf } => *pmf.keys().next_back().expect("non-empty"),
        }
    }
}

impl Default for LengthDistribution {
    fn default() -> Self {
        LengthDistribution::UniformRange { min: 1, max: 5 }
    }
}

impl fmt::Display for LengthDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthDistribution::UniformRange { min, max } => write!(f, "uniform:{min}:{max}"),
            LengthDistribution::Histogram { pmf } => {
                write!(f, "histogram(")?;
                for (i, (l, p)) in pmf.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{l}:{p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for LengthDistribution {
    type Err = SynthesisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_spec(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_parsing() {
        assert_eq!(
            LengthDistribution::from_spec("uniform:1:5").unwrap(),
            LengthDistribution::UniformRange { min: 1, max: 5 }
        );
        assert!(LengthDistribution::from_spec("uniform:0:5").is_err());
        assert!(LengthDistribution::from_spec("uniform:3:2").is_err());
        assert!(LengthDistribution::from_spec("uniform:3").is_err());
    }

    #[test]
    fn pmf_file() {
        let d = LengthDistribution::parse_pmf("# aol\n1 0.5\n2 0.25\n3 0.25\n").unwrap();
        assert!((d.mean() - 1.75).abs() < 1e-12);
        assert_eq!(d.max_len(), 3);
        assert!(LengthDistribution::parse_pmf("1 0.5\n2 0.4\n").is_err());
        assert!(LengthDistribution::parse_pmf("0 1.0\n").is_err());
        assert!(LengthDistribution::parse_pmf("1 x\n").is_err());
        assert!(LengthDistribution::parse_pmf("1 0.5\n1 0.5\n").is_err());
        assert!(LengthDistribution::parse_pmf("").is_err());
    }

    #[test]
    fn samples_stay_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = LengthDistribution::default();
        let h = LengthDistribution::parse_pmf("2 0.5\n7 0.5").unwrap();
        for _ in 0..1000 {
            assert!((1..=5).contains(&u.sample(&mut rng)));
            assert!([2, 7].contains(&h.sample(&mut rng)));
        }
    }
}
