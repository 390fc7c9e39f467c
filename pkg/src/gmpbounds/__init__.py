"""Arbitrage-consistent bounds on multi-asset European options via moment relaxations."""
