use crate::clustering::{Codebook, CompressedWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    CodebookOnly,
    CodebookPlusWeights,
}

impl MessageKind {
    pub fn wire_tag(self) -> u8 {
        match self {
            MessageKind::CodebookOnly => 0,
            MessageKind::CodebookPlusWeights => 1,
        }
    }

    pub fn from_wire_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(MessageKind::CodebookOnly),
            1 => Some(MessageKind::CodebookPlusWeights),
            _ => None,
        }
    }
}

/// What travels between server and clients in either direction.
#[derive(Debug, Clone, PartialEq)]
pub enum TransferMsg {
    CodebookOnly {
        codebook: Codebook,
    },
    CodebookPlusWeights {
        codebook: Codebook,
        weights: CompressedWeights,
    },
}

impl TransferMsg {
    /// Builds a calibration message, rejecting indices outside the codebook.
    pub fn with_weights(codebook: Codebook, weights: CompressedWeights) -> Result<Self> {
        let msg = TransferMsg::CodebookPlusWeights { codebook, weights };
        msg.validate(None)?;
        Ok(msg)
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            TransferMsg::CodebookOnly { .. } => MessageKind::CodebookOnly,
            TransferMsg::CodebookPlusWeights { .. } => MessageKind::CodebookPlusWeights,
        }
    }

    pub fn codebook(&self) -> &Codebook {
        match self {
            TransferMsg::CodebookOnly { codebook }
            | TransferMsg::CodebookPlusWeights { codebook, .. } => codebook,
        }
    }

    pub fn weights(&self) -> Option<&CompressedWeights> {
        match self {
            TransferMsg::CodebookOnly { .. } => None,
            TransferMsg::CodebookPlusWeights { weights, .. } => Some(weights),
        }
    }

    /// Checks index ranges and, when given, the parameter count.
    pub fn validate(&self, param_count: Option<usize>) -> Result<()> {
        if let TransferMsg::CodebookPlusWeights { codebook, weights } = self {
            if let Some(p) = param_count {
                if weights.len() != p {
                    return Err(Error::Dimension(format!(
                        "message carries {} indices, model has {p} parameters",
                        weights.len()
                    )));
                }
            }
            if let Some(&bad) = weights
                .indices()
                .iter()
                .find(|&&i| i as usize >= codebook.len())
            {
                return Err(Error::CorruptMessage(format!(
                    "index {bad} out of range for codebook of {}",
                    codebook.len()
                )));
            }
        }
        Ok(())
    }
}
