"""Emulated 5G exposure service: radio links, PDU sessions, QoS flows, filters."""
