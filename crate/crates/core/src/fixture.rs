//! Small fleet builder shared by unit tests, integration tests and the
//! golden-vector generator.

use crate::identity::{keygen_from_label, DealerAuthority, IvTpId, KeyPair};
use crate::ledger::{Chain, ChainParams, DealerRecord, TimeFlag, Transaction, TxBody};

pub struct Member {
    pub alias: String,
    pub id: IvTpId,
    pub keypair: KeyPair,
}

pub struct Fleet {
    pub dealer: DealerAuthority,
    pub members: Vec<Member>,
    pub chain: Chain,
}

impl Fleet {
    /// Vehicles `IV-1..=IV-n` keyed from SHA-256 of their alias, registered in
    /// block 1 by the dealer named "dealer".
    pub fn new(n: usize, endowment: u64) -> Self {
        let aliases: Vec<String> = (1..=n).map(|i| format!("IV-{i}")).collect();
        Self::with_aliases(&aliases, endowment)
    }

    pub fn with_aliases(aliases: &[String], endowment: u64) -> Self {
        let mut dealer = DealerAuthority::from_name("dealer");
        let params = ChainParams::new(
            endowment,
            vec![DealerRecord {
                dealer_id: dealer.dealer_id(),
                public_key: dealer.public_key(),
            }],
        );
        let mut chain = Chain::new(params);
        let mut members = Vec::new();
        let mut regs = Vec::new();
        for alias in aliases {
            let keypair = keygen_from_label(alias);
            let (id, tx) = dealer
                .issue_ivtp(keypair.public_key(), &chain, TimeFlag(0))
                .expect("fresh key");
            regs.push(tx);
            members.push(Member {
                alias: alias.clone(),
                id,
                keypair,
            });
        }
        if !regs.is_empty() {
            chain.append_block(regs, TimeFlag(0)).expect("registrations");
        }
        Fleet {
            dealer,
            members,
            chain,
        }
    }

    pub fn id(&self, i: usize) -> IvTpId {
        self.members[i].id
    }

    pub fn kp(&self, i: usize) -> &KeyPair {
        &self.members[i].keypair
    }

    pub fn tx(&self, i: usize, tf: u64, body: TxBody) -> Transaction {
        Transaction::new(self.id(i), TimeFlag(tf), body, self.kp(i))
    }

    pub fn reward(&self, from: usize, to: usize, amount: u64, tf: u64, reason: &str) -> Transaction {
        self.tx(
            from,
            tf,
            TxBody::Reward {
                from: self.id(from),
                to: self.id(to),
                amount,
                reason: reason.into(),
            },
        )
    }

    pub fn beacon(&self, i: usize, tf: u64, network_id: &str) -> Transaction {
        self.tx(
            i,
            tf,
            TxBody::Beacon {
                network_id: network_id.into(),
                position_zone: String::new(),
            },
        )
    }

    pub fn comm(&self, from: usize, to: &[usize], tf: u64, message: &[u8]) -> Transaction {
        self.tx(
            from,
            tf,
            TxBody::Comm {
                sender: self.id(from),
                receivers: to.iter().map(|&j| self.id(j)).collect(),
                message_hash: crate::codec::sha256(&[message]),
                tf_sent: TimeFlag(tf),
            },
        )
    }
}
