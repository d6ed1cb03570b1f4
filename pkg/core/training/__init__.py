# Training module initialization
