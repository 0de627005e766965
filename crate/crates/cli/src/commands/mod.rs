pub mod certify;
pub mod code;
pub mod train;
pub mod verify;
