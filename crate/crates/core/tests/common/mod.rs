// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

pub mod meta;
pub mod net;
pub mod primitives;
