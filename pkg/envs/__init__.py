"""Synthetic episodic MDPs with exact value oracles."""
