"""Test suite for the PaQS simulator."""
