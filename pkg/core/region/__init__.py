# Region module initialization
