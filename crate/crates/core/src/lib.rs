pub mod ast;
pub mod backend;
pub mod config;
pub mod engine;
pub mod expr;
pub mod grammar;
pub mod lexer;
pub mod printer;
pub mod rewrite;
pub mod validate;
