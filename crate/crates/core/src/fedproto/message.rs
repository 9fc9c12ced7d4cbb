use std::sync::mpsc::Receiver;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metrics::ClientEval;
use crate::nnkernel::{Matrix, ModelParams};
use crate::rhflcore::{ConfidenceReport, LogitShare, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    ModelUpload,
    LogitShare,
    ConfidenceUpload,
    WeightBroadcast,
    ModelBroadcast,
    EvalReport,
}

impl MessageKind {
    pub fn is_upload(self) -> bool {
        !matches!(self, MessageKind::WeightBroadcast | MessageKind::ModelBroadcast)
    }
}

/// Collaborative knowledge sent from the controller to every client.
#[derive(Debug, Clone)]
pub enum Knowledge {
    /// Elementwise mean of all clients' public logits.
    Consensus(Arc<Matrix>),
    /// Every client's public logits plus the per-client weights.
    Weighted {
        weights: WeightVector,
        shares: Arc<Vec<LogitShare>>,
    },
}

#[derive(Debug, Clone)]
pub enum Payload {
    Model { params: ModelParams, samples: usize },
    Logits(LogitShare),
    Confidence { report: ConfidenceReport, has_history: bool },
    Knowledge(Knowledge),
    Global(ModelParams),
    Eval { eval: ClientEval, collab_loss: Option<f64> },
}

/// A message on the simulated channel. `client_id` is the sender of an upload;
/// broadcasts carry `None`.
#[derive(Debug, Clone)]
pub struct RoundMessage {
    pub round: usize,
    pub client_id: Option<usize>,
    pub payload: Payload,
}

impl RoundMessage {
    pub fn upload(round: usize, client_id: usize, payload: Payload) -> Self {
        RoundMessage {
            round,
            client_id: Some(client_id),
            payload,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Model { .. } => MessageKind::ModelUpload,
            Payload::Logits(_) => MessageKind::LogitShare,
            Payload::Confidence { .. } => MessageKind::ConfidenceUpload,
            Payload::Knowledge(_) => MessageKind::WeightBroadcast,
            Payload::Global(_) => MessageKind::ModelBroadcast,
            Payload::Eval { .. } => MessageKind::EvalReport,
        }
    }
}

/// One processed message, in the order the controller handled it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditEntry {
    pub round: usize,
    pub kind: MessageKind,
    pub client_id: Option<usize>,
}

/// Controller side of the channel. Owns the current round number and the audit
/// trail; rejects messages from any other round.
#[derive(Debug, Default)]
pub struct Controller {
    round: usize,
    audit: Vec<AuditEntry>,
}

impl Controller {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn begin_round(&mut self, round: usize) {
        self.round = round;
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Drains `inbox` and returns exactly one `kind` upload per expected client,
    /// sorted by client id regardless of arrival order.
    pub fn collect(&mut self, inbox: Receiver<RoundMessage>, kind: MessageKind, expected: &[usize]) -> Result<Vec<RoundMessage>> {
        let mut got: Vec<RoundMessage> = Vec::with_capacity(expected.len());
        for msg in inbox.try_iter() {
            self.accept(&msg, kind)?;
            let id = msg.client_id.expect("checked by accept");
            if !expected.contains(&id) {
                return Err(Error::protocol(Some(self.round), Some(id), format!("unexpected {kind:?}")));
            }
            if got.iter().any(|m| m.client_id == Some(id)) {
                return Err(Error::protocol(Some(self.round), Some(id), format!("duplicate {kind:?}")));
            }
            got.push(msg);
        }
        if let Some(&missing) = expected.iter().find(|id| !got.iter().any(|m| m.client_id == Some(**id))) {
            return Err(Error::protocol(Some(self.round), Some(missing), format!("missing {kind:?}")));
        }
        got.sort_by_key(|m| m.client_id);
        self.audit.extend(got.iter().map(|m| AuditEntry {
            round: self.round,
            kind,
            client_id: m.client_id,
        }));
        Ok(got)
    }

    /// Checks round, kind and sender of a single upload.
    pub fn accept(&self, msg: &RoundMessage, kind: MessageKind) -> Result<()> {
        if msg.round != self.round {
            return Err(Error::protocol(
                Some(self.round),
                msg.client_id,
                format!("stale {:?} from round {}", msg.kind(), msg.round),
            ));
        }
        if msg.kind() != kind {
            return Err(Error::protocol(
                Some(self.round),
                msg.client_id,
                format!("expected {kind:?}, got {:?}", msg.kind()),
            ));
        }
        if msg.client_id.is_none() {
            return Err(Error::protocol(Some(self.round), None, "upload without sender"));
        }
        Ok(())
    }

    pub fn broadcast(&mut self, payload: Payload) -> RoundMessage {
        let msg = RoundMessage {
            round: self.round,
            client_id: None,
            payload,
        };
        self.audit.push(AuditEntry {
            round: self.round,
            kind: msg.kind(),
            client_id: None,
        });
        msg
    }
}
