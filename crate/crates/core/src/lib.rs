pub mod conditioning;
pub mod diffusion;
pub mod fusion;
pub mod selftest;
pub mod server;
pub mod simdevice;
pub mod sonify;
pub mod wire;
