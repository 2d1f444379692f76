//! STTD binary and annotated CSV series formats.

use std::fmt::Write as _;
use std::path::Path;

use super::TrafficSeries;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STTD";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 7 * 4;

pub fn write_sttd(s: &TrafficSeries) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + s.values().len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        s.n_nodes() as u32,
        s.t_steps() as u32,
        s.steps_per_day() as u32,
        s.first_dow() as u32,
        s.first_slot() as u32,
        0,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in s.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_sttd(bytes: &[u8]) -> Result<TrafficSeries> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("STTD header truncated: {} of {HEADER_LEN} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected STTD", &bytes[..4])));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported STTD version {version}")));
    }
    let (n, t, t_d, dow, slot, reserved) = (word(1), word(2), word(3), word(4), word(5), word(6));
    if reserved != 0 {
        return Err(Error::Format(format!("reserved header word is {reserved}, expected 0")));
    }
    let cells = (n as usize)
        .checked_mul(t as usize)
        .and_then(|c| c.checked_mul(4).map(|b| (c, b)))
        .ok_or_else(|| Error::Format(format!("dimensions N={n} T={t} overflow")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != cells.1 {
        return Err(Error::Format(format!("STTD body holds {} bytes, header declares {}", body.len(), cells.1)));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    TrafficSeries::new(n as usize, t_d as usize, dow as usize, slot as usize, values)
}

/// Metadata as `# key=value` lines, then one row per step; missing cells empty.
pub fn to_csv_series(s: &TrafficSeries) -> String {
    let mut out = format!("# t_d={}\n# first_dow={}\n# first_slot={}\n", s.steps_per_day(), s.first_dow(), s.first_slot());
    for t in 0..s.t_steps() {
        for (k, v) in s.row(t).iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            if !v.is_nan() {
                write!(out, "{v}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Missing metadata keys default to `t_d=288 first_dow=0 first_slot=0`.
pub fn parse_csv_series(text: &str) -> Result<TrafficSeries> {
    let (mut t_d, mut dow, mut slot) = (288usize, 0usize, 0usize);
    let mut width = None;
    let mut values = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(meta) = line.strip_prefix('#') {
            let Some((key, val)) = meta.split_once('=') else { continue };
            let parsed: usize = val.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("metadata value {:?} is not an integer", val.trim()),
            })?;
            match key.trim() {
                "t_d" => t_d = parsed,
                "first_dow" => dow = parsed,
                "first_slot" => slot = parsed,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown metadata key {other:?}"),
                    })
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("{} cells, expected {w}", cells.len()),
                })
            }
            _ => {}
        }
        for c in cells {
            let c = c.trim();
            values.push(if c.is_empty() {
                f32::NAN
            } else {
                c.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad value {c:?}"),
                })?
            });
        }
    }
    let n = width.ok_or_else(|| Error::Format("CSV series has no data rows".into()))?;
    TrafficSeries::new(n, t_d, dow, slot, values)
}

/// Detects STTD by its magic bytes and otherwise parses CSV.
pub fn load_series(path: impl AsRef<Path>) -> Result<TrafficSeries> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        return read_sttd(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{} is neither STTD nor UTF-8 CSV", path.display())))?;
    parse_csv_series(&text)
}

/// Writes CSV for a `.csv` extension and STTD otherwise.
pub fn save_series(path: impl AsRef<Path>, s: &TrafficSeries) -> Result<()> {
    let path = path.as_ref();
    let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        to_csv_series(s).into_bytes()
    } else {
        write_sttd(s)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(seed: u64) -> TrafficSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..5 * 11)
            .map(|_| if rng.random_bool(0.1) { f32::NAN } else { rng.random_range(-1e4f32..1e4) })
            .collect();
        TrafficSeries::new(5, 24, 4, 13, vals).unwrap()
    }

    fn same(a: &TrafficSeries, b: &TrafficSeries) -> bool {
        let bits = |s: &TrafficSeries| s.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        bits(a) == bits(b)
            && (a.n_nodes(), a.t_steps(), a.steps_per_day(), a.first_dow(), a.first_slot())
                == (b.n_nodes(), b.t_steps(), b.steps_per_day(), b.first_dow(), b.first_slot())
    }

    #[test]
    fn sttd_round_trip_bitwise() {
        let s = random_series(1);
        assert!(same(&read_sttd(&write_sttd(&s)).unwrap(), &s));
    }

    #[test]
    fn csv_round_trip() {
        let s = random_series(2);
        let back = parse_csv_series(&to_csv_series(&s)).unwrap();
        // NaN payloads are not preserved through text; compare masks and finite bits.
        assert_eq!(back.missing_mask(), s.missing_mask());
        for (a, b) in back.values().iter().zip(s.values()) {
            assert!(a.is_nan() && b.is_nan() || a.to_bits() == b.to_bits());
        }
    }

    #[test]
    fn csv_metadata_and_missing() {
        let s = parse_csv_series("# t_d=288\n1,2,\n,4,5\n6,,7\n").unwrap();
        assert_eq!(s.steps_per_day(), 288);
        assert_eq!((s.n_nodes(), s.t_steps()), (3, 3));
        assert_eq!(s.missing_count(), 3);
        assert_eq!(s.missing_mask().iter().filter(|&&m| m).count(), 3);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_csv_series("1,2\n3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_csv_series("# colour=3\n1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn sttd_rejects_corruption() {
        let good = write_sttd(&random_series(3));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_sttd(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(read_sttd(&bad).is_err());
        assert!(read_sttd(&good[..good.len() - 1]).is_err());
        assert!(read_sttd(&good[..10]).is_err());
        let mut huge = good[..HEADER_LEN].to_vec();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(read_sttd(&huge).is_err());
    }

    #[test]
    fn load_detects_format() {
        let dir = tempfile::tempdir().unwrap();
        let s = random_series(4);
        for name in ["a.sttd", "a.csv"] {
            let p = dir.path().join(name);
            save_series(&p, &s).unwrap();
            assert_eq!(load_series(&p).unwrap().missing_mask(), s.missing_mask());
        }
        assert!(matches!(load_series(dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
