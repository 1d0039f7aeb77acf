pub mod corpus;
pub mod oracle;
