//! Dataset files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "ARCLDSET"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              { spec, points_per_curve, split_sizes, origins }
//! records      train, then test, then holdout; per triple, f64 values
//!              s1 xs, s1 ys, s2 xs, s2 ys, s3 xs, s3 ys, len1, len2, len3, cut_param
//! ```
//!
//! The JSON variant is a single object with `schema_version`, `spec`, `train`,
//! `test` and `holdout`; curves are `{"xs": [...], "ys": [...]}`. [`load`]
//! sniffs which one it is reading. [`save`] writes JSON when the path ends in
//! `.json` and binary otherwise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSplits, ExampleTriple, GenSpec, Origin};
use crate::error::{Error, Result};
use crate::geometry::SampledCurve;

pub const DATASET_MAGIC: &[u8; 8] = b"ARCLDSET";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SplitSizes {
    train: usize,
    test: usize,
    holdout: usize,
}

#[derive(Serialize, Deserialize)]
struct Origins {
    train: Vec<Origin>,
    test: Vec<Origin>,
    holdout: Vec<Origin>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: GenSpec,
    points_per_curve: usize,
    split_sizes: SplitSizes,
    origins: Origins,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    schema_version: u32,
    #[serde(flatten)]
    splits: DatasetSplits,
}

pub fn save(splits: &DatasetSplits, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let doc = JsonDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            splits: splits.clone(),
        };
        serde_json::to_writer(&mut w, &doc).map_err(std::io::Error::from)?;
    } else {
        write_binary(splits, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DatasetSplits> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<DatasetSplits> {
    if bytes.starts_with(DATASET_MAGIC) {
        return read_binary(bytes);
    }
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => read_json(bytes),
        _ => Err(Error::malformed("not a dataset file (bad magic)")),
    }
}

fn origins(triples: &[ExampleTriple]) -> Vec<Origin> {
    triples.iter().map(|t| t.origin).collect()
}

fn write_binary<W: Write>(splits: &DatasetSplits, w: &mut W) -> Result<()> {
    let n = splits.spec.points_per_curve;
    if let Some(bad) = splits.all().flat_map(|t| [&t.s1, &t.s2, &t.s3]).find(|c| c.len() != n) {
        return Err(Error::invalid(format!(
            "curve with {} points in a dataset of {n}-point curves",
            bad.len()
        )));
    }
    let header = Header {
        spec: splits.spec.clone(),
        points_per_curve: n,
        split_sizes: SplitSizes {
            train: splits.train.len(),
            test: splits.test.len(),
            holdout: splits.holdout.len(),
        },
        origins: Origins {
            train: origins(&splits.train),
            test: origins(&splits.test),
            holdout: origins(&splits.holdout),
        },
    };
    let header = serde_json::to_vec(&header).map_err(std::io::Error::from)?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_SCHEMA_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;

    let mut buf = Vec::with_capacity(record_floats(n) * 8);
    for t in splits.all() {
        buf.clear();
        for c in [&t.s1, &t.s2, &t.s3] {
            c.xs().chain(c.ys()).for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        }
        for v in [t.len1, t.len2, t.len3, t.cut_param] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn record_floats(n: usize) -> usize {
    6 * n + 4
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::malformed("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn read_binary(bytes: &[u8]) -> Result<DatasetSplits> {
    let mut r = Reader { bytes, pos: 0 };
    r.take(DATASET_MAGIC.len())?;
    let version = r.u32()?;
    if version != DATASET_SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    let header_len = usize::try_from(r.u64()?).map_err(|_| Error::malformed("header too large"))?;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::malformed(format!("bad header: {e}")))?;
    let n = header.points_per_curve;
    if n < 2 || n != header.spec.points_per_curve {
        return Err(Error::malformed(format!("bad points_per_curve {n}")));
    }
    let sizes = &header.split_sizes;
    let os = &header.origins;
    if os.train.len() != sizes.train || os.test.len() != sizes.test || os.holdout.len() != sizes.holdout {
        return Err(Error::malformed("origin lists disagree with split sizes"));
    }
    let total = sizes.train + sizes.test + sizes.holdout;
    let expected = total
        .checked_mul(record_floats(n) * 8)
        .ok_or_else(|| Error::malformed("split sizes overflow"))?;
    let remaining = bytes.len() - r.pos;
    if remaining != expected {
        return Err(Error::malformed(format!(
            "record section holds {remaining} bytes, expected {expected}"
        )));
    }

    let mut read_split = |origins: &[Origin]| -> Result<Vec<ExampleTriple>> {
        origins
            .iter()
            .map(|&origin| {
                let v = r.f64s(record_floats(n))?;
                let curve = |k: usize| {
                    let xs = &v[2 * k * n..(2 * k + 1) * n];
                    let ys = &v[(2 * k + 1) * n..(2 * k + 2) * n];
                    SampledCurve::from_coords(xs, ys).map_err(|e| Error::malformed(e.to_string()))
                };
                let tail = &v[6 * n..];
                Ok(ExampleTriple {
                    s1: curve(0)?,
                    s2: curve(1)?,
                    s3: curve(2)?,
                    len1: tail[0],
                    len2: tail[1],
                    len3: tail[2],
                    cut_param: tail[3],
                    origin,
                })
            })
            .collect()
    };
    let train = read_split(&os.train)?;
    let test = read_split(&os.test)?;
    let holdout = read_split(&os.holdout)?;
    Ok(DatasetSplits {
        spec: header.spec,
        train,
        test,
        holdout,
    })
}

fn read_json(bytes: &[u8]) -> Result<DatasetSplits> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: u32,
    }
    let v: Version =
        serde_json::from_slice(bytes).map_err(|e| Error::malformed(format!("bad JSON dataset: {e}")))?;
    if v.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: v.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    let doc: JsonDataset =
        serde_json::from_slice(bytes).map_err(|e| Error::malformed(format!("bad JSON dataset: {e}")))?;
    Ok(doc.splits)
}
