use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which past frames accompany the target frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SamplingSpec {
    Adjacent {
        n: usize,
    },
    Stepped {
        n: usize,
        step: usize,
    },
    /// Non-positive, strictly increasing, ending at 0.
    Explicit {
        offsets: Vec<i64>,
    },
}

impl SamplingSpec {
    pub fn frames(&self) -> usize {
        match self {
            SamplingSpec::Adjacent { n } | SamplingSpec::Stepped { n, .. } => *n,
            SamplingSpec::Explicit { offsets } => offsets.len(),
        }
    }
}

/// Frame offsets relative to the target frame, oldest first.
pub fn resolve_offsets(spec: &SamplingSpec) -> Result<Vec<i64>> {
    match spec {
        SamplingSpec::Adjacent { n } => resolve_stepped(*n, 1),
        SamplingSpec::Stepped { n, step } => resolve_stepped(*n, *step),
        SamplingSpec::Explicit { offsets } => {
            if offsets.last() != Some(&0) {
                return Err(Error::invalid("sampling offsets", format!("{offsets:?} must end at 0")));
            }
            if offsets.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(
                    "sampling offsets",
                    format!("{offsets:?} must be strictly increasing"),
                ));
            }
            Ok(offsets.clone())
        }
    }
}

fn resolve_stepped(n: usize, step: usize) -> Result<Vec<i64>> {
    if n == 0 {
        return Err(Error::invalid("sampling", "frame count must be at least 1"));
    }
    if step == 0 {
        return Err(Error::invalid("sampling", "step must be at least 1"));
    }
    Ok((0..n).rev().map(|k| -((k * step) as i64)).collect())
}

impl fmt::Display for SamplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingSpec::Adjacent { n } => write!(f, "adjacent:{n}"),
            SamplingSpec::Stepped { n, step } => write!(f, "stepped:{n}:{step}"),
            SamplingSpec::Explicit { offsets } => {
                let parts: Vec<String> = offsets.iter().map(|o| o.to_string()).collect();
                write!(f, "explicit:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for SamplingSpec {
    type Err = Error;

    /// `adjacent:N`, `stepped:N:S` or `explicit:o1,o2,...,0`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(
                "sampling spec",
                format!("`{s}` (expected adjacent:N, stepped:N:S or explicit:o1,..,0)"),
            )
        };
        let mut parts = s.trim().splitn(2, ':');
        let kind = parts.next().ok_or_else(bad)?;
        let rest = parts.next().ok_or_else(bad)?;
        let spec = match kind {
            "adjacent" => SamplingSpec::Adjacent {
                n: rest.parse().map_err(|_| bad())?,
            },
            "stepped" => {
                let (n, step) = rest.split_once(':').ok_or_else(bad)?;
                SamplingSpec::Stepped {
                    n: n.parse().map_err(|_| bad())?,
                    step: step.parse().map_err(|_| bad())?,
                }
            }
            "explicit" => SamplingSpec::Explicit {
                offsets: rest
                    .split(',')
                    .map(|o| o.trim().parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        resolve_offsets(&spec)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        assert_eq!(
            resolve_offsets(&SamplingSpec::Adjacent { n: 7 }).unwrap(),
            vec![-6, -5, -4, -3, -2, -1, 0]
        );
        assert_eq!(
            resolve_offsets(&SamplingSpec::Stepped { n: 3, step: 3 }).unwrap(),
            vec![-6, -3, 0]
        );
        let explicit = SamplingSpec::Explicit {
            offsets: vec![-6, -3, -1, 0],
        };
        assert_eq!(resolve_offsets(&explicit).unwrap(), vec![-6, -3, -1, 0]);
    }

    #[test]
    fn explicit_must_end_at_zero_and_increase() {
        assert!(resolve_offsets(&SamplingSpec::Explicit { offsets: vec![-2, -1] }).is_err());
        assert!(resolve_offsets(&SamplingSpec::Explicit {
            offsets: vec![-1, -1, 0]
        })
        .is_err());
        assert!(resolve_offsets(&SamplingSpec::Explicit { offsets: vec![] }).is_err());
    }

    #[test]
    fn text_round_trip() {
        for s in ["adjacent:3", "stepped:3:3", "explicit:-6,-3,-1,0"] {
            assert_eq!(s.parse::<SamplingSpec>().unwrap().to_string(), s);
        }
        assert!("adjacent:0".parse::<SamplingSpec>().is_err());
        assert!("sparse:3".parse::<SamplingSpec>().is_err());
    }
}
