//! Model persistence and training-set exchange.
//!
//! Binary model layout (little-endian, version 1):
//!
//! | field                  | type            |
//! |------------------------|-----------------|
//! | magic `b"CADM"`        | 4 bytes         |
//! | format_version         | u32             |
//! | L'                     | u32             |
//! | input scale (x, y)     | 2 × f64         |
//! | input offset (x, y)    | 2 × f64         |
//! | delay_unit_scale       | f64             |
//! | variance mode          | u8 (0 learned, 1 fixed) |
//! | fixed var θ, var τ     | 2 × f64 (zero when learned) |
//! | layer count + 1        | u32             |
//! | layer widths           | u32 each        |
//! | per layer: weights (row-major out×in), then bias | f64 |
//!
//! Nothing may follow the last bias.

use std::io::{BufRead, Read, Write};

use ndarray::{Array1, Array2};

use super::mlp::{Dense, MlpParams};
use super::{CadmModel, InputNorm, TrainingSample, TrainingSet, VarianceMode, MODEL_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{Bounds, CommChannelKnowledge, CommPath, PathOrigin, Point2};

const MAGIC: &[u8; 4] = b"CADM";
/// Guards allocation when reading widths from an untrusted file.
const MAX_WIDTH: usize = 1 << 16;

pub fn save_model<W: Write>(model: &CadmModel, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 * model.mlp.parameter_count() + 128);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&model.format_version.to_le_bytes());
    buf.extend_from_slice(&(model.l_prime as u32).to_le_bytes());
    for v in model.input_norm.scale.iter().chain(&model.input_norm.offset) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&model.delay_unit_scale.to_le_bytes());
    let (mode, vt, vd) = match model.variance_mode {
        VarianceMode::Learned => (0u8, 0.0, 0.0),
        VarianceMode::Fixed { var_theta, var_tau } => (1u8, var_theta, var_tau),
    };
    buf.push(mode);
    buf.extend_from_slice(&vt.to_le_bytes());
    buf.extend_from_slice(&vd.to_le_bytes());
    let dims = model.mlp.dims();
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for layer in &model.mlp.layers {
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::ModelFormat(format!(
                "truncated payload at byte {}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_model<R: Read>(mut input: R) -> Result<CadmModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let l_prime = c.u32()? as usize;
    let scale = [c.f64()?, c.f64()?];
    let offset = [c.f64()?, c.f64()?];
    let delay_unit_scale = c.f64()?;
    let mode = c.u8()?;
    let (vt, vd) = (c.f64()?, c.f64()?);
    let variance_mode = match mode {
        0 => VarianceMode::Learned,
        1 => VarianceMode::Fixed {
            var_theta: vt,
            var_tau: vd,
        },
        m => return Err(Error::ModelFormat(format!("unknown variance mode {m}"))),
    };
    let n_dims = c.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::ModelFormat(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| {
            let d = c.u32()? as usize;
            if d == 0 || d > MAX_WIDTH {
                return Err(Error::ModelFormat(format!("implausible layer width {d}")));
            }
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let (inp, out) = (w[0], w[1]);
        let raw = c.take(8 * inp * out)?;
        let weight: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let bias = (0..out).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((out, inp), weight)
                .map_err(|e| Error::ModelFormat(e.to_string()))?,
            bias: Array1::from(bias),
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after payload",
            bytes.len() - c.pos
        )));
    }
    let model = CadmModel {
        mlp: MlpParams { layers },
        l_prime,
        input_norm: InputNorm { scale, offset },
        delay_unit_scale,
        variance_mode,
        format_version: version,
    };
    model
        .validate()
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(model)
}

/// Columnar text: a `# bounds <w> <h>` line, a header row, then one row per
/// sample: `x, y` followed by L' groups of `aod_rad, delay_s, gain`.
pub fn write_training_set<W: Write>(set: &TrainingSet, mut out: W) -> Result<()> {
    let l_prime = set.l_prime()?;
    writeln!(out, "# bounds {:?} {:?}", set.bounds.width, set.bounds.height)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    for k in 1..=l_prime {
        header.extend([format!("aod_rad_{k}"), format!("delay_s_{k}"), format!("gain_{k}")]);
    }
    writeln!(out, "{}", header.join(","))?;
    for s in &set.samples {
        let mut row = vec![format!("{:?}", s.location.x), format!("{:?}", s.location.y)];
        for p in s.truth.paths() {
            row.extend([
                format!("{:?}", p.aod_rad),
                format!("{:?}", p.delay_s),
                format!("{:?}", p.gain),
            ]);
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_training_set<R: BufRead>(input: R) -> Result<TrainingSet> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::NoData("empty training file".into()))??;
    let toks: Vec<&str> = first.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "#" || toks[1] != "bounds" {
        return Err(Error::parse(1, "expected '# bounds <width> <height>'"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(1, e.to_string()));
    let bounds = Bounds::new(num(toks[2])?, num(toks[3])?).map_err(|e| Error::parse(1, e.to_string()))?;

    let rest: String = lines.collect::<std::io::Result<Vec<_>>>()?.join("\n");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    let width = rdr.headers().map_err(|e| Error::parse(2, e.to_string()))?.len();
    if width < 5 || (width - 2) % 3 != 0 {
        return Err(Error::parse(2, format!("bad column count {width}")));
    }
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 3;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::parse(line, format!("'{f}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let paths = vals[2..]
            .chunks_exact(3)
            .map(|c| CommPath {
                aod_rad: c[0],
                delay_s: c[1],
                gain: c[2],
                origin: PathOrigin::Unknown,
            })
            .collect();
        let truth = CommChannelKnowledge::new(paths).map_err(|e| Error::parse(line, e.to_string()))?;
        samples.push(TrainingSample {
            location: Point2::new(vals[0], vals[1]),
            truth,
        });
    }
    TrainingSet::new(bounds, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> CadmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        CadmModel::initialize(&Bounds::new(100.0, 80.0).unwrap(), 2, &[5, 7], &mut rng).unwrap()
    }

    #[test]
    fn save_load_identity() {
        let m = model();
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut buf = Vec::new();
        save_model(&model(), &mut buf).unwrap();
        for cut in [3, 20, buf.len() - 1] {
            assert!(matches!(
                load_model(&buf[..cut]),
                Err(Error::ModelFormat(_))
            ));
        }
        buf.push(0);
        assert!(load_model(buf.as_slice()).is_err());
    }

    #[test]
    fn version_bump_rejected() {
        let mut buf = Vec::new();
        save_model(&model(), &mut buf).unwrap();
        buf[4..8].copy_from_slice(&(MODEL_FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            load_model(buf.as_slice()),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn training_set_round_trip() {
        let paths = |a: f64| {
            CommChannelKnowledge::new(vec![
                CommPath {
                    aod_rad: a,
                    delay_s: 1.234e-7,
                    gain: 0.5,
                    origin: PathOrigin::Unknown,
                },
                CommPath {
                    aod_rad: -a,
                    delay_s: 2.5e-7,
                    gain: 0.25,
                    origin: PathOrigin::Unknown,
                },
            ])
            .unwrap()
        };
        let set = TrainingSet::new(
            Bounds::new(100.0, 100.0).unwrap(),
            vec![
                TrainingSample {
                    location: Point2::new(1.5, 2.25),
                    truth: paths(0.1),
                },
                TrainingSample {
                    location: Point2::new(99.0, 0.125),
                    truth: paths(3.0),
                },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_training_set(&set, &mut buf).unwrap();
        let back = read_training_set(buf.as_slice()).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn training_set_parse_error_has_line() {
        let text = "# bounds 10 10\nx,y,aod_rad_1,delay_s_1,gain_1\n1,2,0.1,1e-8,1\n1,2,zz,1e-8,1\n";
        match read_training_set(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
