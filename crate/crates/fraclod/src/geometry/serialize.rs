//! Plain-text interface network serialization.
//!
//! Header lines are `# key value`; every other line is one edge,
//! `j x1 y1 x2 y2`, with coordinates as exact dyadic rationals `p/q`.

use super::{InterfaceNetwork, LevelEdges, NetworkKind, Segment};
use crate::mesh::scale_to_level;
use crate::{Error, Result};

pub fn write_network(network: &InterfaceNetwork) -> String {
    let mut out = String::new();
    out.push_str("# fraclod-network v1\n");
    out.push_str(&format!("# kind {}\n", network.kind));
    out.push_str(&format!("# kmax {}\n", network.k_max));
    if let Some(seed) = network.seed {
        out.push_str(&format!("# seed {seed}\n"));
    }
    for j in 1..=network.depth() {
        let level = network.level(j);
        let q = level.res();
        for s in &level.segments {
            out.push_str(&format!(
                "{j} {}/{q} {}/{q} {}/{q} {}/{q}\n",
                s.a[0], s.a[1], s.b[0], s.b[1]
            ));
        }
    }
    out
}

fn parse_rational(token: &str, res: i64) -> Result<i64> {
    let err = || Error::Parse(format!("bad coordinate `{token}`"));
    let (p, q) = match token.split_once('/') {
        Some((p, q)) => (
            p.parse::<i64>().map_err(|_| err())?,
            q.parse::<i64>().map_err(|_| err())?,
        ),
        None => (token.parse::<i64>().map_err(|_| err())?, 1),
    };
    if q <= 0 || (q & (q - 1)) != 0 {
        return Err(Error::Parse(format!(
            "denominator of `{token}` is not a positive power of two"
        )));
    }
    // Exact conversion onto the target lattice.
    let num = p.checked_mul(res).ok_or_else(err)?;
    if num % q != 0 {
        return Err(Error::Parse(format!(
            "coordinate `{token}` is not representable on the level lattice"
        )));
    }
    Ok(num / q)
}

pub fn parse_network(text: &str) -> Result<InterfaceNetwork> {
    let mut kind: Option<NetworkKind> = None;
    let mut k_max: Option<usize> = None;
    let mut seed: Option<u64> = None;
    let mut edges: Vec<(usize, [i64; 2], [i64; 2])> = Vec::new();
    let lattice_of = |j: usize, kind: NetworkKind| scale_to_level(kind, j);

    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            match it.next() {
                Some("kind") => {
                    kind = match it.next() {
                        Some("localized") => Some(NetworkKind::Localized),
                        Some("geological") => Some(NetworkKind::Geological),
                        other => {
                            return Err(Error::Parse(format!("unknown kind {other:?}")));
                        }
                    }
                }
                Some("kmax") => {
                    k_max = Some(
                        it.next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::Parse("bad kmax".into()))?,
                    )
                }
                Some("seed") => {
                    seed = Some(
                        it.next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::Parse("bad seed".into()))?,
                    )
                }
                _ => {} // tolerated comment
            }
            continue;
        }
        let kind = kind.ok_or_else(|| Error::Parse("edge before kind header".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(Error::Parse(format!("line {}: expected 5 fields", ln + 1)));
        }
        let j: usize = toks[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad level", ln + 1)))?;
        if j == 0 {
            return Err(Error::Parse(format!("line {}: level must be >= 1", ln + 1)));
        }
        let res = 1i64 << lattice_of(j, kind);
        let a = [parse_rational(toks[1], res)?, parse_rational(toks[2], res)?];
        let b = [parse_rational(toks[3], res)?, parse_rational(toks[4], res)?];
        edges.push((j, a, b));
    }
    let kind = kind.ok_or_else(|| Error::Parse("missing kind header".into()))?;
    let k_max = k_max.ok_or_else(|| Error::Parse("missing kmax header".into()))?;
    let depth = edges.iter().map(|e| e.0).max().unwrap_or(0).max(k_max);
    let mut levels: Vec<LevelEdges> = (1..=depth)
        .map(|j| LevelEdges {
            lattice_log2: scale_to_level(kind, j),
            segments: Vec::new(),
        })
        .collect();
    for (j, a, b) in edges {
        let level = &mut levels[j - 1];
        let d = [b[0] - a[0], b[1] - a[1]];
        let (steps, step) = if d[0] == 0 && d[1] != 0 {
            (d[1].abs(), [0, d[1].signum()])
        } else if d[1] == 0 && d[0] != 0 {
            (d[0].abs(), [d[0].signum(), 0])
        } else if d[0] == d[1] && d[0] != 0 {
            (d[0].abs(), [d[0].signum(), d[1].signum()])
        } else {
            return Err(Error::Parse(format!(
                "edge {a:?}-{b:?} is neither axis-aligned nor diagonal"
            )));
        };
        for i in 0..steps {
            let p = [a[0] + i * step[0], a[1] + i * step[1]];
            let q = [p[0] + step[0], p[1] + step[1]];
            level.segments.push(Segment::new(p, q));
        }
    }
    Ok(InterfaceNetwork::from_levels(kind, k_max, seed, levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geological_network, build_localized_network};

    #[test]
    fn round_trip_localized() {
        let net = build_localized_network(3).unwrap();
        let text = write_network(&net);
        let back = parse_network(&text).unwrap();
        assert_eq!(back.kind, net.kind);
        assert_eq!(back.k_max, net.k_max);
        for j in 1..=3 {
            assert_eq!(back.level(j).segments, net.level(j).segments);
            assert_eq!(back.level(j).lattice_log2, net.level(j).lattice_log2);
        }
    }

    #[test]
    fn round_trip_geological_bit_identical() {
        let net = build_geological_network(3, 1234).unwrap();
        let back = parse_network(&write_network(&net)).unwrap();
        assert_eq!(back.seed, Some(1234));
        for j in 1..=3 {
            assert_eq!(back.level(j).segments, net.level(j).segments);
        }
    }

    #[test]
    fn accepts_long_segments_and_plain_integers() {
        let text = "# kind localized\n# kmax 1\n1 1/4 0 1/4 1\n1 0 1/4 1 1/4\n1 1/2 0 1/2 1/4\n1 0 1/2 1/4 1/2\n";
        let net = parse_network(text).unwrap();
        let expect = build_localized_network(1).unwrap();
        assert_eq!(net.level(1).segments, expect.level(1).segments);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_network("1 0 0 1 1\n").is_err()); // no headers
        assert!(parse_network("# kind localized\n# kmax 1\n1 1/3 0 1/3 1\n").is_err());
        assert!(parse_network("# kind localized\n# kmax 1\n1 0 0 1 2\n").is_err());
    }
}
