use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::DataError;

/// Acquisition domain of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    InVivo,
    ExVivo,
    Phantom,
    Synthetic,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::InVivo => "in-vivo",
            Domain::ExVivo => "ex-vivo",
            Domain::Phantom => "phantom",
            Domain::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Domain::InVivo, Domain::ExVivo, Domain::Phantom, Domain::Synthetic]
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test1,
    Test2,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test1, Split::Test2];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test1 => "test1",
            Split::Test2 => "test2",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: PathBuf,
    pub label: PathBuf,
    pub domain: Domain,
}

/// Ordered list of samples; one `image<TAB>label<TAB>domain` line each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub samples: Vec<Sample>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, DataError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(DataError::Manifest {
                    line: i + 1,
                    msg: format!("expected 3 tab-separated fields, found {}", parts.len()),
                });
            }
            let domain = parts[2]
                .trim()
                .parse()
                .map_err(|msg| DataError::Manifest { line: i + 1, msg })?;
            samples.push(Sample {
                image: base.join(parts[0]),
                label: base.join(parts[1]),
                domain,
            });
        }
        Ok(Self { samples })
    }

    /// Render with paths made relative to `base` where possible.
    pub fn render(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        self.samples
            .iter()
            .map(|s| format!("{}\t{}\t{}\n", rel(&s.image), rel(&s.label), s.domain))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let base = path.parent().unwrap_or(Path::new("."));
        std::fs::write(path, self.render(base)).map_err(|e| DataError::io(path, e))
    }
}
