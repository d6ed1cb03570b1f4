# Storage module initialization