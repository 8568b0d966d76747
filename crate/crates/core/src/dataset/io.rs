use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GeneratorConfig, MultiStreamTrial};
use crate::error::{Error, Result};
use crate::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "tsinv-dataset";
const MANIFEST: &str = "manifest.toml";
const TRIAL_MAGIC: &str = "# tsinv trial";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: Option<u64>,
    trials: Vec<String>,
    config: Option<GeneratorConfig>,
}

fn trial_file(id: usize) -> String {
    format!("trial_{id:05}.txt")
}

/// Writes `trials` as a dataset directory: a manifest plus one text file per trial.
pub fn save(trials: &[MultiStreamTrial], dir: &Path, config: Option<&GeneratorConfig>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in trials {
        t.validate()?;
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        seed: config.map(|c| c.seed),
        trials: trials.iter().map(|t| trial_file(t.id)).collect(),
        config: config.cloned(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::config(format!("manifest encoding: {e}")))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    trials.par_iter().try_for_each(|t| {
        let path = dir.join(trial_file(t.id));
        fs::write(&path, render(t)).map_err(|e| Error::io(&path, e))
    })
}

/// Reads a dataset directory written by [`save`], in manifest order.
pub fn load(dir: &Path) -> Result<(Vec<MultiStreamTrial>, Option<GeneratorConfig>)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(&path, &text, e))?;
    let version = value.get("version").and_then(toml::Value::as_integer);
    if version != Some(i64::from(FORMAT_VERSION)) {
        return Err(Error::Version {
            path,
            expected: FORMAT_VERSION.to_string(),
            found: version.map_or_else(|| "none".into(), |v| v.to_string()),
        });
    }
    let manifest: Manifest = toml::from_str(&text).map_err(|e| parse_error(&path, &text, e))?;
    if manifest.format != FORMAT_NAME {
        return Err(Error::Parse { path, line: 1, msg: format!("unknown format {:?}", manifest.format) });
    }
    let trials = manifest
        .trials
        .par_iter()
        .map(|name| {
            let p = dir.join(name);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            parse(&p, &text)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trials, manifest.config))
}

fn parse_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
    Error::Parse { path: path.into(), line, msg: e.message().to_string() }
}

fn render(t: &MultiStreamTrial) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{TRIAL_MAGIC} v{FORMAT_VERSION}");
    let _ = writeln!(s, "id {}", t.id);
    let _ = writeln!(s, "user {}", t.user);
    let _ = writeln!(s, "technique {}", t.technique);
    let _ = writeln!(s, "rate {:?}", t.rate);
    let _ = writeln!(s, "states {}", t.states);
    let _ = writeln!(s, "frames {}", t.len());
    let _ = writeln!(s, "dims {} {} {}", t.kin.cols(), t.vis.cols(), t.evt.cols());
    s.push_str("[labels]\n");
    for l in &t.labels {
        let _ = writeln!(s, "{l}");
    }
    for (name, m) in [("kin", &t.kin), ("vis", &t.vis)] {
        let _ = writeln!(s, "[{name}]");
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
    }
    s.push_str("[evt]\n");
    for r in 0..t.evt.rows() {
        let row: Vec<&str> = t.evt.row(r).iter().map(|&x| if x == 1.0 { "1" } else { "0" }).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

struct Lines<'a> {
    path: PathBuf,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.clone(), line: self.line, msg: msg.into() }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.fail("unexpected end of file"))
            }
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(self.fail(format!("expected `{key} <value>`"))),
        }
    }

    fn number<T: std::str::FromStr>(&self, text: &str) -> Result<T> {
        text.trim().parse().map_err(|_| self.fail(format!("invalid number {text:?}")))
    }

    fn header(&mut self, name: &str) -> Result<()> {
        if self.next()? != format!("[{name}]") {
            return Err(self.fail(format!("expected section [{name}]")));
        }
        Ok(())
    }

    fn block(&mut self, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = self.next()?;
            let before = out.len();
            for tok in l.split(' ') {
                out.push(self.number::<f64>(tok)?);
            }
            if out.len() - before != cols {
                return Err(self.fail(format!("expected {cols} values, found {}", out.len() - before)));
            }
        }
        Ok(out)
    }
}

fn parse(path: &Path, text: &str) -> Result<MultiStreamTrial> {
    let mut r = Lines { path: path.into(), iter: text.lines().enumerate(), line: 0 };
    let magic = r.next()?;
    let Some(version) = magic.strip_prefix(TRIAL_MAGIC).map(str::trim) else {
        return Err(r.fail("not a trial file"));
    };
    if version != format!("v{FORMAT_VERSION}") {
        return Err(Error::Version { path: path.into(), expected: format!("v{FORMAT_VERSION}"), found: version.into() });
    }
    let v = r.field("id")?;
    let id = r.number(v)?;
    let v = r.field("user")?;
    let user = r.number(v)?;
    let v = r.field("technique")?;
    let technique = r.number(v)?;
    let v = r.field("rate")?;
    let rate = r.number(v)?;
    let v = r.field("states")?;
    let states = r.number(v)?;
    let v = r.field("frames")?;
    let frames: usize = r.number(v)?;
    let v = r.field("dims")?;
    let dims: Vec<usize> = v.split(' ').map(|d| r.number(d)).collect::<Result<_>>()?;
    let [kc, vc, ec] = dims[..] else {
        return Err(r.fail("expected three stream dimensions"));
    };
    if frames == 0 || kc == 0 || vc == 0 || ec == 0 {
        return Err(r.fail("frame count and dimensions must be positive"));
    }
    r.header("labels")?;
    let mut labels = Vec::with_capacity(frames);
    for _ in 0..frames {
        let l = r.next()?;
        labels.push(r.number(l)?);
    }
    r.header("kin")?;
    let kin = r.block(frames, kc)?;
    r.header("vis")?;
    let vis = r.block(frames, vc)?;
    r.header("evt")?;
    let evt = r.block(frames, ec)?;
    if let Some((i, _)) = r.iter.find(|(_, l)| !l.is_empty()) {
        r.line = i + 1;
        return Err(r.fail("trailing content"));
    }
    let trial = MultiStreamTrial {
        id,
        user,
        technique,
        rate,
        states,
        kin: Tensor::matrix(frames, kc, kin)?,
        vis: Tensor::matrix(frames, vc, vis)?,
        evt: Tensor::matrix(frames, ec, evt)?,
        labels,
    };
    trial.validate().map_err(|e| Error::Parse { path: path.into(), line: 0, msg: e.to_string() })?;
    Ok(trial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_from_config;

    fn cfg(trials: usize) -> GeneratorConfig {
        GeneratorConfig { trials, users: 5, duration_range: (0.5, 1.5), ..Default::default() }
    }

    fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = cfg(8);
        let trials = generate_from_config(&c).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save(&trials, a.path(), Some(&c)).unwrap();
        let (loaded, config) = load(a.path()).unwrap();
        assert_eq!(loaded, trials);
        assert_eq!(config.as_ref(), Some(&c));
        save(&loaded, b.path(), config.as_ref()).unwrap();
        assert_eq!(snapshot(a.path()), snapshot(b.path()));
    }

    #[test]
    fn hundred_trials_round_trip_labels() {
        let trials = generate_from_config(&cfg(100)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&trials, dir.path(), None).unwrap();
        let (loaded, _) = load(dir.path()).unwrap();
        assert_eq!(loaded.len(), 100);
        for (a, b) in trials.iter().zip(&loaded) {
            assert_eq!(a.labels, b.labels);
            assert!(a.kin.data().iter().zip(b.kin.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn extreme_values_round_trip_bit_exactly() {
        let mut trial = generate_from_config(&cfg(5)).unwrap().remove(0);
        let extremes = [1e-300, -2.5e307, 0.1 + 0.2, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0];
        for (x, &e) in trial.kin.data_mut().iter_mut().zip(&extremes) {
            *x = e;
        }
        let dir = tempfile::tempdir().unwrap();
        save(std::slice::from_ref(&trial), dir.path(), None).unwrap();
        let (loaded, _) = load(dir.path()).unwrap();
        for (x, y) in trial.kin.data().iter().zip(loaded[0].kin.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let trials = generate_from_config(&cfg(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&trials, dir.path(), None).unwrap();
        let p = dir.path().join(trial_file(0));
        let text = fs::read_to_string(&p).unwrap();
        let lines = text.lines().count();
        fs::write(&p, &text[..text.len() / 2]).unwrap();
        match load(dir.path()) {
            Err(Error::Parse { line, .. }) => assert!(line > 0 && line <= lines),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_its_line() {
        let trials = generate_from_config(&cfg(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&trials, dir.path(), None).unwrap();
        let p = dir.path().join(trial_file(1));
        let text = fs::read_to_string(&p).unwrap().replacen("[labels]\n", "[labels]\nx\n", 1);
        fs::write(&p, text).unwrap();
        match load(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let trials = generate_from_config(&cfg(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&trials, dir.path(), None).unwrap();
        let p = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&p).unwrap().replace("version = 1", "version = 99");
        fs::write(&p, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Version { .. })));

        let dir = tempfile::tempdir().unwrap();
        save(&trials, dir.path(), None).unwrap();
        let p = dir.path().join(trial_file(2));
        let text = fs::read_to_string(&p).unwrap().replacen("v1", "v7", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Version { .. })));
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(&dir.path().join("absent")), Err(Error::Io { .. })));
    }
}
