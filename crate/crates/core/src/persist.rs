//! Model files and atomic output.
//!
//! A model file is sectioned key/value text. Every real is written with 17
//! significant digits so a save/load round trip is exact:
//!
//! ```text
//! version = 1
//! [architecture]
//! input_dim = 3
//! hidden = 50 50
//! experts = 2
//! [scalars]
//! lambda = 7.5000000000000000e-1
//! time_scale = ...
//! [prior]
//! log_shape = ...
//! log_scale = ...
//! [standardization]
//! means = ...
//! stds = ...
//! [features]
//! 0 = age
//! [experts]
//! 0 = <log_shape> <log_scale>
//! [layer.0]
//! weights = ...   (row-major, out × in)
//! bias = ...
//! [output_map]
//! weights = ...   (row-major, K × h)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dataset::Transform;
use crate::error::{DcsmError, Result};
use crate::gating::{DenseLayer, GatingNetwork};
use crate::model::DcsmModel;
use crate::weibull::{WeibullExpert, WeibullPrior};

pub const FORMAT_VERSION: u32 = 1;

/// Write through a temporary file in the destination directory, then rename.
/// On error nothing is left at `path`.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| DcsmError::io(dir, e))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf).map_err(|e| DcsmError::io(path, e))?;
        buf.flush().map_err(|e| DcsmError::io(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| DcsmError::io(path, e.error))?;
    Ok(())
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values
        .into_iter()
        .map(|&v| fmt_real(v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn to_text(m: &DcsmModel) -> String {
    let mut s = String::new();
    let hidden: Vec<String> = m.gating.hidden().iter().map(|h| h.to_string()).collect();
    writeln!(s, "version = {FORMAT_VERSION}").unwrap();
    writeln!(s, "[architecture]").unwrap();
    writeln!(s, "input_dim = {}", m.input_dim()).unwrap();
    writeln!(s, "hidden = {}", hidden.join(" ")).unwrap();
    writeln!(s, "experts = {}", m.k()).unwrap();
    writeln!(s, "[scalars]").unwrap();
    writeln!(s, "lambda = {}", fmt_real(m.lambda)).unwrap();
    writeln!(s, "time_scale = {}", fmt_real(m.transform.time_scale)).unwrap();
    writeln!(s, "[prior]").unwrap();
    writeln!(s, "log_shape = {}", fmt_real(m.prior.log_shape)).unwrap();
    writeln!(s, "log_scale = {}", fmt_real(m.prior.log_scale)).unwrap();
    writeln!(s, "[standardization]").unwrap();
    writeln!(s, "means = {}", fmt_list(&m.transform.means)).unwrap();
    writeln!(s, "stds = {}", fmt_list(&m.transform.stds)).unwrap();
    writeln!(s, "[features]").unwrap();
    for (i, name) in m.feature_names.iter().enumerate() {
        writeln!(s, "{i} = {name}").unwrap();
    }
    writeln!(s, "[experts]").unwrap();
    for (i, e) in m.experts.iter().enumerate() {
        writeln!(
            s,
            "{i} = {} {}",
            fmt_real(e.log_shape),
            fmt_real(e.log_scale)
        )
        .unwrap();
    }
    for (i, l) in m.gating.layers.iter().enumerate() {
        writeln!(s, "[layer.{i}]").unwrap();
        writeln!(s, "weights = {}", fmt_list(l.weights.iter())).unwrap();
        writeln!(s, "bias = {}", fmt_list(l.bias.iter())).unwrap();
    }
    writeln!(s, "[output_map]").unwrap();
    writeln!(s, "weights = {}", fmt_list(m.gating.output_map.iter())).unwrap();
    s
}

pub fn save(m: &DcsmModel, path: impl AsRef<Path>) -> Result<()> {
    let text = to_text(m);
    write_atomic(path.as_ref(), |w| w.write_all(text.as_bytes()))
}

pub fn load(path: impl AsRef<Path>) -> Result<DcsmModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DcsmError::io(path, e))?;
    from_text(&text)
}

type Section = Vec<(String, String)>;

struct Document {
    version: Option<String>,
    sections: HashMap<String, Section>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut sections: HashMap<String, Section> = HashMap::new();
        let mut current: Option<String> = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if sections.contains_key(name) {
                    return Err(DcsmError::Format(format!("duplicate section [{name}]")));
                }
                sections.insert(name.to_string(), Vec::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DcsmError::Format(format!("line {}: expected `key = value`", no + 1))
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            match &current {
                None if key == "version" => version = Some(value),
                None => {
                    return Err(DcsmError::Format(format!(
                        "line {}: `{key}` outside any section",
                        no + 1
                    )))
                }
                Some(sec) => sections.get_mut(sec).expect("inserted").push((key, value)),
            }
        }
        Ok(Document { version, sections })
    }

    fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .get(name)
            .ok_or_else(|| DcsmError::Format(format!("missing section [{name}]")))
    }

    fn value(&self, section: &str, key: &str) -> Result<&str> {
        self.section(section)?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| DcsmError::Format(format!("missing key `{key}` in [{section}]")))
    }

    fn real(&self, section: &str, key: &str) -> Result<f64> {
        parse_real(self.value(section, key)?, section, key)
    }

    fn reals(&self, section: &str, key: &str, expected: usize) -> Result<Vec<f64>> {
        let v = self
            .value(section, key)?
            .split_whitespace()
            .map(|s| parse_real(s, section, key))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != expected {
            return Err(DcsmError::Format(format!(
                "[{section}] {key}: expected {expected} values, found {}",
                v.len()
            )));
        }
        Ok(v)
    }

    fn usize(&self, section: &str, key: &str) -> Result<usize> {
        let v = self.value(section, key)?;
        v.parse()
            .map_err(|_| DcsmError::Format(format!("[{section}] {key}: `{v}` is not an integer")))
    }
}

fn parse_real(s: &str, section: &str, key: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| DcsmError::Format(format!("[{section}] {key}: `{s}` is not a number")))
}

pub fn from_text(text: &str) -> Result<DcsmModel> {
    let doc = Document::parse(text)?;
    match doc.version.as_deref() {
        Some(v) if v == FORMAT_VERSION.to_string() => {}
        Some(v) => {
            return Err(DcsmError::Format(format!(
                "unsupported model version `{v}` (expected {FORMAT_VERSION})"
            )))
        }
        None => return Err(DcsmError::Format("missing version field".into())),
    }
    let d = doc.usize("architecture", "input_dim")?;
    let k = doc.usize("architecture", "experts")?;
    let hidden: Vec<usize> = doc
        .value("architecture", "hidden")?
        .split_whitespace()
        .map(|s| {
            s.parse().map_err(|_| {
                DcsmError::Format(format!("[architecture] hidden: `{s}` is not an integer"))
            })
        })
        .collect::<Result<_>>()?;

    let mut layers = Vec::with_capacity(hidden.len());
    let mut fan_in = d;
    for (i, &width) in hidden.iter().enumerate() {
        let name = format!("layer.{i}");
        let w = doc.reals(&name, "weights", width * fan_in)?;
        let b = doc.reals(&name, "bias", width)?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((width, fan_in), w).expect("length checked"),
            bias: Array1::from(b),
        });
        fan_in = width;
    }
    let out = doc.reals("output_map", "weights", k * fan_in)?;
    let gating = GatingNetwork::from_parts(
        layers,
        Array2::from_shape_vec((k, fan_in), out).expect("length checked"),
    )?;

    let expert_sec = doc.section("experts")?;
    if expert_sec.len() != k {
        return Err(DcsmError::Format(format!(
            "[experts]: expected {k} entries, found {}",
            expert_sec.len()
        )));
    }
    let experts = (0..k)
        .map(|i| {
            let v = doc.reals("experts", &i.to_string(), 2)?;
            Ok(WeibullExpert {
                log_shape: v[0],
                log_scale: v[1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let prior = WeibullPrior {
        log_shape: doc.real("prior", "log_shape")?,
        log_scale: doc.real("prior", "log_scale")?,
    };
    let transform = Transform {
        means: doc.reals("standardization", "means", d)?,
        stds: doc.reals("standardization", "stds", d)?,
        time_scale: doc.real("scalars", "time_scale")?,
    };
    let feature_names = (0..d)
        .map(|i| doc.value("features", &i.to_string()).map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    DcsmModel::new(
        gating,
        experts,
        prior,
        doc.real("scalars", "lambda")?,
        transform,
        feature_names,
    )
}
