pub mod lpwan;
pub mod sensor;
pub mod sim;
pub mod dqn;
pub mod vision;
pub mod gateway;
