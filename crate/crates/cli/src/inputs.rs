//! File loading shared by the subcommands, and the CLI error type.

use std::fmt;
use std::path::{Path, PathBuf};

use snnrt_core::events::{load_events_csv, load_events_nmnist};
use snnrt_core::{bin_to_frames, load_model, BinningOptions, EventStream, FrameSequence, Network, Tensor};

use crate::FrameArgs;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unusable paths.
    Usage(String),
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    Core {
        context: String,
        source: snnrt_core::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::File { .. } => 2,
            CliError::Core {
                source: snnrt_core::Error::Io(_),
                ..
            } => 2,
            CliError::Core { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::File { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core { context, source } if context.is_empty() => write!(f, "{source}"),
            CliError::Core { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T> Context<T> for snnrt_core::Result<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: what.to_string(),
            source,
        })
    }
}

impl From<snnrt_core::Error> for CliError {
    fn from(source: snnrt_core::Error) -> Self {
        CliError::Core {
            context: String::new(),
            source,
        }
    }
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

/// The parsed model and the raw file bytes (for hashing).
pub fn read_model(path: &Path) -> CliResult<(Network, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Core {
        context: path.display().to_string(),
        source: snnrt_core::Error::Parse {
            line: 0,
            column: 0,
            msg: "model file is not UTF-8".into(),
        },
    })?;
    let net = load_model(&text).context(path.display())?;
    Ok((net, text.into_bytes()))
}

pub fn parse_sensor(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW, e.g. 34x34")?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("invalid sensor extent {v:?}")),
    };
    Ok((dim(h)?, dim(w)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Nmnist,
    Csv,
    FrameDump,
}

fn kind_of(path: &Path) -> Option<Kind> {
    match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "bin" => Some(Kind::Nmnist),
        "csv" => Some(Kind::Csv),
        "json" => Some(Kind::FrameDump),
        _ => None,
    }
}

pub fn read_events(path: &Path, sensor: (usize, usize)) -> CliResult<EventStream> {
    match kind_of(path) {
        Some(Kind::Nmnist) => load_events_nmnist(&read_bytes(path)?).context(path.display()),
        Some(Kind::Csv) => load_events_csv(&read_text(path)?, sensor).context(path.display()),
        _ => Err(CliError::Usage(format!(
            "{}: expected a .bin (N-MNIST) or .csv (t,x,y,p) event file",
            path.display()
        ))),
    }
}

/// One input sample shaped for `net`: events are binned into the model's
/// input channels (one channel collapses polarity), frame dumps are used as is.
pub fn read_sample(path: &Path, net: &Network, args: &FrameArgs) -> CliResult<FrameSequence> {
    let dims = net.input_shape.dims();
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    if kind_of(path) == Some(Kind::FrameDump) {
        let tensor: Tensor = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Core {
            context: path.display().to_string(),
            source: snnrt_core::Error::Parse {
                line: e.line(),
                column: e.column(),
                msg: e.to_string(),
            },
        })?;
        return FrameSequence::from_tensor(tensor, 0).context(path.display());
    }
    if c > 2 {
        return Err(CliError::Usage(format!(
            "model input has {c} channels; event input can only fill 1 or 2"
        )));
    }
    let stream = read_events(path, (h, w))?;
    let opts = BinningOptions {
        binarize: args.binarize,
        collapse_polarity: c == 1,
        fixed_bin_width_us: None,
    };
    bin_to_frames(&stream, args.frames.unwrap_or(net.num_steps), opts).context(path.display())
}

/// Event files of a dataset directory, sorted by file name.
pub fn dataset_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::File {
        path: dir.to_owned(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| CliError::File {
                path: dir.to_owned(),
                source,
            })?
            .path();
        if path.is_file() && kind_of(&path).is_some() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no .bin, .csv or .json sample files",
            dir.display()
        )));
    }
    files.sort();
    Ok(files)
}

/// Class label encoded as a trailing `_<digits>` in the file stem.
pub fn label_from_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let (_, suffix) = stem.rsplit_once('_')?;
    if suffix.is_empty() || !suffix.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    suffix.parse().ok()
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}
