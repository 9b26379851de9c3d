//! FHAIM core: a leveled-HE simulation, tabular encoding, the encrypted
//! marginal protocols, differential-privacy machinery, and the AIM training
//! loop for private synthetic tabular data.

pub mod aim;
pub mod dp;
pub mod encode;
pub mod he;
pub mod metrics;
pub mod model;
pub mod protocols;
