//! Address-event input: N-MNIST binary records, generic CSV, and binning into
//! per-step frames.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const NMNIST_SENSOR: (usize, usize) = (34, 34);
pub const NMNIST_RECORD_BYTES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Event {
    /// Microseconds since the start of the recording.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// 0 or 1.
    pub polarity: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    sensor_shape: (usize, usize),
}

impl EventStream {
    /// Builds a stream, checking sensor bounds and sorting by timestamp
    /// (stable, so equal-time events keep file order).
    pub fn new(mut events: Vec<Event>, sensor_shape: (usize, usize)) -> Result<Self> {
        let (h, w) = sensor_shape;
        if h == 0 || w == 0 {
            return Err(Error::Argument(format!(
                "sensor shape {sensor_shape:?} has a zero extent"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if usize::from(e.x) >= w || usize::from(e.y) >= h {
                return Err(Error::Format {
                    record: i,
                    msg: format!("event at ({}, {}) outside {h}x{w} sensor", e.x, e.y),
                });
            }
            if e.polarity > 1 {
                return Err(Error::Format {
                    record: i,
                    msg: format!("polarity {} not in {{0, 1}}", e.polarity),
                });
            }
        }
        events.sort_by_key(|e| e.t);
        Ok(EventStream { events, sensor_shape })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// (height, width).
    pub fn sensor_shape(&self) -> (usize, usize) {
        self.sensor_shape
    }

    /// Largest timestamp, 0 for an empty stream.
    pub fn duration_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t)
    }
}

/// Decodes N-MNIST 5-byte AER records.
///
/// Layout per record: byte 0 = x, byte 1 = y, byte 2 bit 7 = polarity,
/// byte 2 bits 6..0 = timestamp bits 22..16, bytes 3 and 4 = timestamp bits
/// 15..0, big-endian.
pub fn load_events_nmnist(bytes: &[u8]) -> Result<EventStream> {
    if !bytes.len().is_multiple_of(NMNIST_RECORD_BYTES) {
        return Err(Error::Format {
            record: bytes.len() / NMNIST_RECORD_BYTES,
            msg: format!(
                "trailing partial record: {} bytes is not a multiple of {NMNIST_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    let events = bytes
        .chunks_exact(NMNIST_RECORD_BYTES)
        .map(|r| Event {
            x: u16::from(r[0]),
            y: u16::from(r[1]),
            polarity: r[2] >> 7,
            t: (u64::from(r[2] & 0x7f) << 16) | (u64::from(r[3]) << 8) | u64::from(r[4]),
        })
        .collect();
    EventStream::new(events, NMNIST_SENSOR)
}

/// Encodes events as N-MNIST records. Coordinates must fit a byte and
/// timestamps 23 bits.
pub fn encode_nmnist(events: &[Event]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * NMNIST_RECORD_BYTES);
    for (i, e) in events.iter().enumerate() {
        if e.x > 0xff || e.y > 0xff || e.t >= 1 << 23 || e.polarity > 1 {
            return Err(Error::Format {
                record: i,
                msg: format!("{e:?} does not fit the 5-byte record"),
            });
        }
        out.extend_from_slice(&[
            e.x as u8,
            e.y as u8,
            (e.polarity << 7) | ((e.t >> 16) as u8 & 0x7f),
            (e.t >> 8) as u8,
            e.t as u8,
        ]);
    }
    Ok(out)
}

/// Parses `t,x,y,p` lines. A header line `t,x,y,p` is optional; LF and CRLF
/// line endings are both accepted.
pub fn load_events_csv(text: &str, sensor_shape: (usize, usize)) -> Result<EventStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                line,
                column: 0,
                msg: e.to_string(),
            }
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("t")) {
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                column: 0,
                msg: format!("expected 4 fields t,x,y,p, got {}", record.len()),
            });
        }
        let field = |k: usize| -> Result<u64> {
            let raw = &record[k];
            raw.parse::<u64>().map_err(|_| Error::Parse {
                line,
                column: k + 1,
                msg: format!(
                    "field {} is not a non-negative integer: {raw:?}",
                    ["t", "x", "y", "p"][k]
                ),
            })
        };
        let (t, x, y, p) = (field(0)?, field(1)?, field(2)?, field(3)?);
        if p > 1 {
            return Err(Error::Value {
                line,
                msg: format!("polarity {p} not in {{0, 1}}"),
            });
        }
        let (h, w) = sensor_shape;
        if x >= w as u64 || y >= h as u64 {
            return Err(Error::Value {
                line,
                msg: format!("event at ({x}, {y}) outside {h}x{w} sensor"),
            });
        }
        events.push(Event {
            t,
            x: x as u16,
            y: y as u16,
            polarity: p as u8,
        });
    }
    EventStream::new(events, sensor_shape)
}

/// How events map onto time bins and channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinningOptions {
    /// Clamp every cell to {0, 1}.
    pub binarize: bool,
    /// Merge both polarities into a single channel.
    pub collapse_polarity: bool,
    /// Use this bin width instead of deriving one from the stream duration.
    pub fixed_bin_width_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Tensor,
    bin_width_us: u64,
}

impl FrameSequence {
    /// Wraps an existing `[T, C, H, W]` tensor, e.g. synthetic input.
    pub fn from_tensor(frames: Tensor, bin_width_us: u64) -> Result<Self> {
        if frames.shape().rank() != 4 {
            return Err(Error::shape(format!(
                "frames must be [T,C,H,W], got {}",
                frames.shape()
            )));
        }
        Ok(FrameSequence { frames, bin_width_us })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dims()[0]
    }

    /// `[C, H, W]` of each frame.
    pub fn frame_dims(&self) -> &[usize] {
        &self.frames.dims()[1..]
    }

    pub fn frame(&self, step: usize) -> &[f32] {
        let n = self.frame_dims().iter().product::<usize>();
        &self.frames.data()[step * n..(step + 1) * n]
    }

    pub fn bin_width_us(&self) -> u64 {
        self.bin_width_us
    }

    /// Debug dump in the `{"shape":[...],"data":[...]}` tensor form.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.frames).expect("tensor serialization")
    }
}

/// Accumulates events into `num_frames` bins.
///
/// Bin width defaults to `ceil((duration + 1) / num_frames)`; an event at time
/// `t` lands in bin `min(t / width, num_frames - 1)`.
pub fn bin_to_frames(stream: &EventStream, num_frames: usize, opts: BinningOptions) -> Result<FrameSequence> {
    if num_frames == 0 {
        return Err(Error::Argument("number of frames must be >= 1".into()));
    }
    let bin_width = match opts.fixed_bin_width_us {
        Some(0) => return Err(Error::Argument("fixed bin width must be >= 1 us".into())),
        Some(w) => w,
        None => (stream.duration_us() + 1).div_ceil(num_frames as u64),
    };
    let (h, w) = stream.sensor_shape();
    let channels = if opts.collapse_polarity { 1 } else { 2 };
    let mut frames = Tensor::zeros(Shape::new(vec![num_frames, channels, h, w])?);

    let data = frames.data_mut();
    let last = (num_frames - 1) as u64;
    for e in stream.events() {
        let bin = (e.t / bin_width).min(last) as usize;
        let c = if opts.collapse_polarity {
            0
        } else {
            usize::from(e.polarity)
        };
        let idx = ((bin * channels + c) * h + usize::from(e.y)) * w + usize::from(e.x);
        data[idx] += 1.0;
    }
    if opts.binarize {
        for v in data.iter_mut() {
            *v = v.min(1.0);
        }
    }
    FrameSequence::from_tensor(frames, bin_width)
}
