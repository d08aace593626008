use serde::{Deserialize, Serialize};

use crate::codec::{is_wide, put_shape, put_u32, put_u64, put_values, Reader};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

pub const FRAME_MAGIC: [u8; 4] = *b"SLF1";
/// Set in the kind byte when the payload is encoded as fp64 instead of fp32.
pub const WIDE_PAYLOAD_FLAG: u8 = 0x80;
/// Control payload announcing the end of the session.
pub const END_OF_SESSION: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    SmashedData,
    GradientReturn,
    TopForward,
    TopGradient,
    Control,
}

impl MessageKind {
    pub fn code(self) -> u8 {
        match self {
            Self::SmashedData => 1,
            Self::GradientReturn => 2,
            Self::TopForward => 3,
            Self::TopGradient => 4,
            Self::Control => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            1 => Self::SmashedData,
            2 => Self::GradientReturn,
            3 => Self::TopForward,
            4 => Self::TopGradient,
            5 => Self::Control,
            other => return Err(Error::Frame(format!("unknown message kind {other}"))),
        })
    }
}

/// One protocol message. Control messages carry a scalar (epoch index, or
/// [`END_OF_SESSION`]) or, for the opening handshake, the per-sample
/// smashed-data shape as a rank-1 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Message<T: Scalar> {
    pub kind: MessageKind,
    pub batch_id: u64,
    pub payload: Tensor<T>,
    pub labels: Option<Vec<usize>>,
}

impl<T: Scalar> Message<T> {
    pub fn new(kind: MessageKind, batch_id: u64, payload: Tensor<T>) -> Self {
        Self { kind, batch_id, payload, labels: None }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn control(batch_id: u64, value: f64) -> Self {
        Self::new(MessageKind::Control, batch_id, Tensor::scalar(T::from_f64(value)))
    }

    pub fn handshake(batch_id: u64, smashed_shape: &[usize]) -> Self {
        let dims: Vec<f64> = smashed_shape.iter().map(|&d| d as f64).collect();
        let payload = Tensor::from_f64(&[dims.len()], &dims).expect("nonempty shape");
        Self::new(MessageKind::Control, batch_id, payload)
    }

    /// Scalar value of a control message.
    pub fn control_value(&self) -> Option<f64> {
        (self.kind == MessageKind::Control && self.payload.rank() == 0).then(|| self.payload.data()[0].as_f64())
    }

    pub fn handshake_shape(&self) -> Option<Vec<usize>> {
        (self.kind == MessageKind::Control && self.payload.rank() == 1)
            .then(|| self.payload.data().iter().map(|v| v.as_f64() as usize).collect())
    }

    pub fn is_end(&self) -> bool {
        self.control_value() == Some(END_OF_SESSION)
    }

    /// Binary frame: magic, kind byte, u64 batch id, rank byte and u32
    /// dims, little-endian payload, then a label block (flag byte, and if
    /// set a u32 count followed by u32 labels).
    pub fn encode(&self) -> Result<Vec<u8>> {
        self.payload.ensure_finite("message payload")?;
        let wide = is_wide::<T>();
        let mut out = Vec::with_capacity(32 + self.payload.numel() * if wide { 8 } else { 4 });
        out.extend_from_slice(&FRAME_MAGIC);
        out.push(self.kind.code() | if wide { WIDE_PAYLOAD_FLAG } else { 0 });
        put_u64(&mut out, self.batch_id);
        put_shape(&mut out, self.payload.shape())?;
        put_values(&mut out, self.payload.data(), wide);
        match &self.labels {
            None => out.push(0),
            Some(labels) => {
                out.push(1);
                put_u32(&mut out, labels.len() as u32);
                for &l in labels {
                    let l = u32::try_from(l).map_err(|_| Error::Frame(format!("label {l} does not fit in u32")))?;
                    put_u32(&mut out, l);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode). The whole buffer must be one frame.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != FRAME_MAGIC {
            return Err(Error::Frame("bad magic".into()));
        }
        let kind_byte = r.u8()?;
        let wide = kind_byte & WIDE_PAYLOAD_FLAG != 0;
        if wide != is_wide::<T>() {
            return Err(Error::Frame(format!(
                "payload precision {} does not match receiver {:?}",
                if wide { "fp64" } else { "fp32" },
                T::PRECISION
            )));
        }
        let kind = MessageKind::from_code(kind_byte & !WIDE_PAYLOAD_FLAG)?;
        let batch_id = r.u64()?;
        let shape = r.shape()?;
        let payload = r.tensor::<T>(&shape, wide)?;
        let labels = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u32()? as usize;
                if n > r.remaining() / 4 {
                    return Err(Error::Truncated { needed: n * 4, have: r.remaining() });
                }
                Some((0..n).map(|_| r.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?)
            }
            other => return Err(Error::Frame(format!("bad label flag {other}"))),
        };
        if r.remaining() != 0 {
            return Err(Error::Frame(format!("{} trailing bytes", r.remaining())));
        }
        payload.ensure_finite("message payload")?;
        Ok(Self { kind, batch_id, payload, labels })
    }
}
