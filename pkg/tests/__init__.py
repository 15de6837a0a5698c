"""Test suite for AutoCycle-VC."""
