from bcgmodel.cli import main

main()
