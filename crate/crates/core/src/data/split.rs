use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{read_file, write_file, LabelMap};
use crate::error::{Error, Result};

/// How many training pixels to draw from each class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerClass {
    Count(usize),
    /// Fraction in `(0, 1)`, rounded half up.
    Fraction(f64),
    /// Every pixel but one per class goes to training.
    AllButOne,
}

impl PerClass {
    fn train_count(self, available: usize) -> Option<usize> {
        let n = match self {
            PerClass::Count(n) => n,
            PerClass::Fraction(f) if f > 0.0 && f < 1.0 => {
                (f * available as f64 + 0.5).floor() as usize
            }
            PerClass::Fraction(_) => return None,
            PerClass::AllButOne => available.checked_sub(1)?,
        };
        (n >= 1 && n <= available).then_some(n)
    }
}

impl fmt::Display for PerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerClass::Count(n) => write!(f, "{n}"),
            PerClass::Fraction(x) => write!(f, "{x}"),
            PerClass::AllButOne => f.write_str("all-but-one"),
        }
    }
}

impl std::str::FromStr for PerClass {
    type Err = Error;

    /// Integers are counts, values with a decimal point are fractions.
    fn from_str(s: &str) -> Result<Self> {
        if s == "all-but-one" {
            return Ok(PerClass::AllButOne);
        }
        if let Ok(n) = s.parse::<usize>() {
            return Ok(PerClass::Count(n));
        }
        match s.parse::<f64>() {
            Ok(f) if f > 0.0 && f < 1.0 => Ok(PerClass::Fraction(f)),
            _ => Err(Error::Config(format!(
                "train_per_class: expected a count, a fraction in (0,1) or `all-but-one`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// A labeled pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub class: u16,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub per_class: PerClass,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Samples training pixels per class without replacement; every other
/// labeled pixel becomes a test pixel, in row-major order.
pub fn make_split(labels: &LabelMap, per_class: PerClass, seed: u64) -> Result<SplitSpec> {
    let classes = labels.num_classes();
    let mut by_class: Vec<Vec<(usize, usize)>> = vec![Vec::new(); classes];
    for (r, c) in labels.labeled() {
        by_class[labels.get(r, c) as usize - 1].push((r, c));
    }
    let mut counts = Vec::with_capacity(classes);
    let mut bad = Vec::new();
    for (k, pixels) in by_class.iter().enumerate() {
        match per_class.train_count(pixels.len()) {
            Some(n) => counts.push(n),
            None => bad.push(format!("class {} ({} pixels)", k + 1, pixels.len())),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Split(format!(
            "cannot draw `{per_class}` training pixels from {}",
            bad.join(", ")
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = vec![false; labels.height() * labels.width()];
    let mut train = Vec::new();
    for (k, pixels) in by_class.iter().enumerate() {
        for i in sample(&mut rng, pixels.len(), counts[k]).into_iter() {
            let (row, col) = pixels[i];
            is_train[row * labels.width() + col] = true;
            train.push(Sample {
                class: (k + 1) as u16,
                row,
                col,
            });
        }
    }
    let test = labels
        .labeled()
        .into_iter()
        .filter(|&(r, c)| !is_train[r * labels.width() + c])
        .map(|(row, col)| Sample {
            class: labels.get(row, col),
            row,
            col,
        })
        .collect();
    Ok(SplitSpec {
        per_class,
        seed,
        train,
        test,
    })
}

impl SplitSpec {
    /// `class,row,col,role` records after a commented provenance header.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# per_class = {}\n# seed = {}\nclass,row,col,role\n",
            self.per_class, self.seed
        );
        for (role, list) in [(Role::Train, &self.train), (Role::Test, &self.test)] {
            for p in list {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    p.class,
                    p.row,
                    p.col,
                    role.as_str()
                ));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |n: usize, msg: &str| Error::Format(format!("split line {}: {msg}", n + 1));
        let mut per_class = None;
        let mut seed = None;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    match k.trim() {
                        "per_class" => {
                            per_class = Some(
                                v.trim()
                                    .parse::<PerClass>()
                                    .map_err(|_| bad(n, "bad per_class"))?,
                            )
                        }
                        "seed" => {
                            seed = Some(v.trim().parse::<u64>().map_err(|_| bad(n, "bad seed"))?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() || line == "class,row,col,role" {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(n, "expected 4 fields"));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| bad(n, "non-integer field"))
            };
            let class = num(f[0])?;
            if class == 0 || class > u16::MAX as usize {
                return Err(bad(n, "class out of range"));
            }
            let s = Sample {
                class: class as u16,
                row: num(f[1])?,
                col: num(f[2])?,
            };
            match f[3].trim() {
                "train" => train.push(s),
                "test" => test.push(s),
                _ => return Err(bad(n, "role must be train or test")),
            }
        }
        Ok(Self {
            per_class: per_class
                .ok_or_else(|| Error::Format("split lacks `# per_class` header".into()))?,
            seed: seed.ok_or_else(|| Error::Format("split lacks `# seed` header".into()))?,
            train,
            test,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
        Self::from_text(&text)
    }

    /// Checks the split against a label map: disjoint, labeled, consistent.
    pub fn validate(&self, labels: &LabelMap) -> Result<()> {
        let mut seen = vec![false; labels.height() * labels.width()];
        for p in self.train.iter().chain(&self.test) {
            if p.row >= labels.height() || p.col >= labels.width() {
                return Err(Error::Split(format!(
                    "pixel ({},{}) lies outside the scene",
                    p.row, p.col
                )));
            }
            if labels.get(p.row, p.col) != p.class {
                return Err(Error::Split(format!(
                    "pixel ({},{}) is class {} in the split but {} in the labels",
                    p.row,
                    p.col,
                    p.class,
                    labels.get(p.row, p.col)
                )));
            }
            let i = p.row * labels.width() + p.col;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Split(format!(
                    "pixel ({},{}) appears twice",
                    p.row, p.col
                )));
            }
        }
        Ok(())
    }
}
