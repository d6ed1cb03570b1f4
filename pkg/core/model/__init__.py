# Model module initialization
