use std::collections::BTreeSet;

use crate::codec::{CodecError, Reader, Writer};
use crate::identity::{IvTpId, KeyPair, PublicKey, Signature, SIGNATURE_LEN};
use crate::ledger::{read_ids, write_ids, TimeFlag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Beacon = 1,
    Comm = 2,
    Intent = 3,
    Schedule = 4,
    Agree = 5,
    Disagree = 6,
    Endorse = 7,
    RewardNotice = 8,
}

impl FrameKind {
    pub const ALL: [FrameKind; 8] = [
        FrameKind::Beacon,
        FrameKind::Comm,
        FrameKind::Intent,
        FrameKind::Schedule,
        FrameKind::Agree,
        FrameKind::Disagree,
        FrameKind::Endorse,
        FrameKind::RewardNotice,
    ];

    pub fn from_tag(tag: u8) -> Result<Self, CodecError> {
        Self::ALL
            .get(usize::from(tag).wrapping_sub(1))
            .copied()
            .ok_or(CodecError::UnknownTag { what: "frame kind", tag })
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Beacon => "beacon",
            FrameKind::Comm => "comm",
            FrameKind::Intent => "intent",
            FrameKind::Schedule => "schedule",
            FrameKind::Agree => "agree",
            FrameKind::Disagree => "disagree",
            FrameKind::Endorse => "endorse",
            FrameKind::RewardNotice => "reward_notice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Audience {
    Broadcast,
    To(BTreeSet<IvTpId>),
}

impl Audience {
    pub fn to(id: IvTpId) -> Self {
        Audience::To([id].into_iter().collect())
    }

    pub fn includes(&self, id: &IvTpId) -> bool {
        match self {
            Audience::Broadcast => true,
            Audience::To(set) => set.contains(id),
        }
    }
}

/// A signed, time-flagged message between vehicles.
///
/// Wire layout: kind (1) ∥ sender (32) ∥ audience tag (1) ∥ id count (4) ∥
/// ids ∥ tf (8) ∥ payload length (4) ∥ payload ∥ signature (64). The
/// signature covers every byte before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub sender: IvTpId,
    pub audience: Audience,
    pub tf: TimeFlag,
    pub kind: FrameKind,
    pub payload: Vec<u8>,
    pub signature: Signature,
}

impl Frame {
    pub fn signed(
        sender: IvTpId,
        audience: Audience,
        tf: TimeFlag,
        kind: FrameKind,
        payload: Vec<u8>,
        kp: &KeyPair,
    ) -> Result<Self, CodecError> {
        let mut f = Frame {
            sender,
            audience,
            tf,
            kind,
            payload,
            signature: Signature([0; SIGNATURE_LEN]),
        };
        f.signature = kp.sign(&f.signing_bytes()?);
        Ok(f)
    }

    pub fn signing_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.u8(self.kind as u8).hash(&self.sender.0);
        match &self.audience {
            Audience::Broadcast => {
                w.u8(0).count(0)?;
            }
            Audience::To(ids) => {
                w.u8(1);
                write_ids(&mut w, &ids.iter().copied().collect::<Vec<_>>())?;
            }
        }
        w.u64(self.tf.0).bytes(&self.payload)?;
        Ok(w.finish())
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut bytes = self.signing_bytes()?;
        bytes.extend_from_slice(&self.signature.0);
        Ok(bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let kind = FrameKind::from_tag(r.u8()?)?;
        let sender = IvTpId(r.hash()?);
        let audience = match r.u8()? {
            0 => match r.u32()? {
                0 => Audience::Broadcast,
                _ => return Err(CodecError::Invalid("broadcast audience with ids")),
            },
            1 => {
                let ids = read_ids(&mut r)?;
                // Sets encode in ascending order; anything else is not canonical.
                if ids.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(CodecError::Invalid("audience not strictly ascending"));
                }
                Audience::To(ids.into_iter().collect())
            }
            tag => return Err(CodecError::UnknownTag { what: "audience", tag }),
        };
        let tf = TimeFlag(r.u64()?);
        let payload = r.bytes()?.to_vec();
        let signature = Signature(r.array()?);
        r.finish()?;
        Ok(Frame {
            sender,
            audience,
            tf,
            kind,
            payload,
            signature,
        })
    }

    pub fn verify(&self, key: &PublicKey) -> bool {
        self.signing_bytes()
            .map(|m| key.verify(&m, &self.signature))
            .unwrap_or(false)
    }
}
