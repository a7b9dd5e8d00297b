pub mod codec;
pub mod fixture;
pub mod identity;
pub mod ledger;
pub mod consensus;
pub mod netsim;
pub mod arbitration;
pub mod vehicle;
pub mod scenario;
pub mod sim;
pub mod report;
pub mod inspect;
pub mod vectors;
