# Initialize package
