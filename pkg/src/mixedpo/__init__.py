"""Policy optimization for mixed H2/H-infinity state-feedback control."""
